"""Reverse-mode automatic differentiation over dense 64-bit arrays.

The engine is deliberately small: a dozen primitives cover everything the
recurrent and variational layers need.  All computation happens eagerly in
numpy; while a :class:`GradTape` is active each primitive also records
itself, so :meth:`GradTape.backward` can walk the record once, in reverse,
and accumulate exact gradients for every registered parameter.

Design notes:

* :class:`Tensor` is an immutable value wrapper.  Ops never mutate their
  inputs, so recorded intermediates can be shared freely across tapes.
* The active-tape stack is thread-local: a single tape is single-threaded,
  but independent tapes may run concurrently.
* `grad_check` provides the independent central finite-difference route
  used to validate every analytic gradient in the test-suite.
"""

from __future__ import annotations

import math
import threading
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import ContractError, DimensionError, DomainError, StateError

__all__ = [
    "OP_KINDS",
    "Tensor",
    "GradTape",
    "as_tensor",
    "primitive_forward",
    "backward",
    "grad_check",
    "matmul",
    "add",
    "multiply",
    "concat",
    "slice_",
    "sigmoid",
    "tanh",
    "softplus",
    "softmax_rows",
    "log",
    "reduce_sum",
    "reduce_mean",
    "cross_entropy_mean",
]

#: Op kinds accepted by :func:`primitive_forward`.
OP_KINDS = (
    "matmul",
    "add",
    "multiply",
    "concat",
    "slice",
    "sigmoid",
    "tanh",
    "softplus",
    "softmax-rows",
    "log",
    "sum",
    "mean",
)

_LEAF = "leaf"


class Tensor:
    """Immutable dense array of 64-bit reals with a row-major layout.

    Tensors produced under an active tape remember the node that computed
    them; tensors built directly from data are constants.  The wrapped
    array must never be mutated after construction.
    """

    __slots__ = ("data", "_tape", "_idx")

    def __init__(self, data):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        self.data = arr
        self._tape = None
        self._idx = -1

    @classmethod
    def _wrap(cls, arr: np.ndarray, tape: "GradTape | None", idx: int) -> "Tensor":
        t = object.__new__(cls)
        t.data = arr
        t._tape = tape
        t._idx = idx
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() requires a scalar, got shape {self.shape}")
        return float(self.data.reshape(()))

    def tolist(self):
        return self.data.tolist()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"


def as_tensor(x) -> Tensor:
    """Wrap `x` as a Tensor (no copy if already one)."""
    return x if isinstance(x, Tensor) else Tensor(x)


# --------------------------------------------------------------------------
# Active-tape stack

_local = threading.local()


def _active_tape() -> "GradTape | None":
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class GradTape:
    """Ordered record of primitive applications plus a parameter registry.

    Use as a context manager; every primitive evaluated inside the block is
    recorded.  After the block, :meth:`backward` returns the gradient of a
    scalar output with respect to every registered parameter (zero for
    parameters the output does not depend on).
    """

    def __init__(self):
        self._ops: list[str] = []
        self._args: list[tuple[int, ...]] = []
        self._ctx: list = []
        self._vals: list[np.ndarray] = []
        self._needs: list[bool] = []
        self._params: dict[str, int] = {}

    def __enter__(self) -> "GradTape":
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _local.stack.pop()

    def __len__(self) -> int:
        return len(self._ops)

    # -- recording ---------------------------------------------------------

    def _append(self, op: str, args: tuple[int, ...], ctx, value: np.ndarray,
                needs: bool) -> int:
        idx = len(self._ops)
        self._ops.append(op)
        self._args.append(args)
        self._ctx.append(ctx)
        self._vals.append(value)
        self._needs.append(needs)
        return idx

    def _leaf(self, value: np.ndarray, needs: bool) -> int:
        return self._append(_LEAF, (), None, value, needs)

    def _bind(self, t: Tensor) -> int:
        """Node index for an input tensor, adding a constant leaf if new."""
        if t._tape is self:
            return t._idx
        return self._leaf(t.data, needs=False)

    def parameter(self, name: str, value) -> Tensor:
        """Register a named trainable leaf and return its bound tensor."""
        if name in self._params:
            raise ContractError(f"parameter {name!r} already registered")
        t = as_tensor(value)
        idx = self._leaf(t.data, needs=True)
        self._params[name] = idx
        return Tensor._wrap(t.data, self, idx)

    @property
    def parameters(self) -> dict[str, Tensor]:
        """Registered parameters as bound tensors."""
        return {name: Tensor._wrap(self._vals[i], self, i)
                for name, i in self._params.items()}

    # -- backward ----------------------------------------------------------

    def backward(self, output: Tensor) -> dict[str, Tensor]:
        """Exact reverse-mode gradients of a scalar `output`.

        Returns one gradient tensor per registered parameter, shaped like
        the parameter; parameters the output does not reach get zeros.
        """
        if not self._ops:
            raise StateError("backward called before any forward computation")
        if output._tape is not self:
            raise StateError("output was not computed on this tape")
        if output.data.size != 1:
            raise ContractError(
                f"backward requires a scalar output, got shape {output.shape}")

        n = len(self._ops)
        grads: list[np.ndarray | None] = [None] * n
        # `owned[i]` means grads[i] is private to this pass and may be
        # mutated in place.
        owned = [False] * n
        grads[output._idx] = np.ones_like(self._vals[output._idx])
        owned[output._idx] = True

        ops, args_list, ctxs, vals, needs = (
            self._ops, self._args, self._ctx, self._vals, self._needs)

        for i in range(output._idx, -1, -1):
            g = grads[i]
            if g is None:
                continue
            op = ops[i]
            if op == _LEAF:
                continue
            args = args_list[i]
            need_mask = tuple(needs[j] for j in args)
            if not any(need_mask):
                continue
            contribs = _BACKWARD[op](
                g, [vals[j] for j in args], vals[i], ctxs[i], need_mask)
            for j, c in zip(args, contribs):
                if c is None:
                    continue
                if isinstance(c, _SliceScatter):
                    if grads[j] is None:
                        grads[j] = np.zeros_like(vals[j])
                        owned[j] = True
                    elif not owned[j]:
                        grads[j] = grads[j].copy()
                        owned[j] = True
                    grads[j][c.key] += c.grad
                elif grads[j] is None:
                    grads[j] = c
                    owned[j] = False
                elif owned[j] and grads[j].shape == c.shape:
                    np.add(grads[j], c, out=grads[j])
                else:
                    grads[j] = grads[j] + c
                    owned[j] = True

        out: dict[str, Tensor] = {}
        for name, idx in self._params.items():
            g = grads[idx]
            out[name] = Tensor(g if g is not None else np.zeros_like(self._vals[idx]))
        return out

    # -- replay ------------------------------------------------------------

    def replay(self) -> None:
        """Recompute every recorded op from leaf values.

        Raises :class:`StateError` if any recomputed value differs from the
        recorded one bit-for-bit.
        """
        for i, op in enumerate(self._ops):
            if op == _LEAF:
                continue
            inputs = [self._vals[j] for j in self._args[i]]
            fresh = _FORWARD[op](inputs, self._ctx[i])
            if fresh.tobytes() != self._vals[i].tobytes():
                raise StateError(f"replay mismatch at node {i} ({op})")


def backward(tape: GradTape, output: Tensor) -> dict[str, Tensor]:
    """Module-level alias for :meth:`GradTape.backward`."""
    return tape.backward(output)


# --------------------------------------------------------------------------
# Shared helpers


class _SliceScatter:
    """Backward contribution that writes `grad` into a window of the input."""

    __slots__ = ("key", "grad")

    def __init__(self, key, grad):
        self.key = key
        self.grad = grad


def _check_not_empty(*tensors: Tensor) -> None:
    for t in tensors:
        if t.data.size == 0:
            raise DomainError("empty tensors are not allowed")


def _record(op: str, inputs: Sequence[Tensor], out: np.ndarray, ctx=None) -> Tensor:
    tape = _active_tape()
    if tape is None:
        return Tensor._wrap(out, None, -1)
    idxs = tuple(tape._bind(t) for t in inputs)
    needs = any(tape._needs[j] for j in idxs)
    idx = tape._append(op, idxs, ctx, out, needs)
    return Tensor._wrap(out, tape, idx)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcasted gradient back to `shape`."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form saturates cleanly instead of overflowing and is the
    # fastest single-pass formulation numpy offers.
    return 0.5 * np.tanh(0.5 * x) + 0.5


# --------------------------------------------------------------------------
# Primitives: forward + backward pairs


def matmul(a, b) -> Tensor:
    """2-D matrix product `a @ b`."""
    a, b = as_tensor(a), as_tensor(b)
    _check_not_empty(a, b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(
            f"matmul needs 2-D operands, got shapes {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    return _record("matmul", (a, b), a.data @ b.data)


def _matmul_fwd(vals, ctx):
    return vals[0] @ vals[1]


def _matmul_bwd(g, vals, out, ctx, need):
    a, b = vals
    ga = g @ b.T if need[0] else None
    gb = a.T @ g if need[1] else None
    return ga, gb


def add(a, b) -> Tensor:
    """Elementwise sum with numpy broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    _check_not_empty(a, b)
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(
            f"add operands do not broadcast: {a.shape} vs {b.shape}") from None
    return _record("add", (a, b), a.data + b.data)


def _add_fwd(vals, ctx):
    return vals[0] + vals[1]


def _add_bwd(g, vals, out, ctx, need):
    ga = _unbroadcast(g, vals[0].shape) if need[0] else None
    gb = _unbroadcast(g, vals[1].shape) if need[1] else None
    return ga, gb


def multiply(a, b) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    _check_not_empty(a, b)
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(
            f"multiply operands do not broadcast: {a.shape} vs {b.shape}") from None
    return _record("multiply", (a, b), a.data * b.data)


def _multiply_fwd(vals, ctx):
    return vals[0] * vals[1]


def _multiply_bwd(g, vals, out, ctx, need):
    a, b = vals
    ga = _unbroadcast(g * b, a.shape) if need[0] else None
    gb = _unbroadcast(g * a, b.shape) if need[1] else None
    return ga, gb


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    """Concatenate tensors of equal rank along `axis`."""
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise DomainError("concat needs at least one input")
    _check_not_empty(*ts)
    ndim = ts[0].ndim
    if axis < 0 or axis >= ndim:
        raise DimensionError(f"concat axis {axis} out of range for rank {ndim}")
    for t in ts[1:]:
        if t.ndim != ndim:
            raise DimensionError("concat inputs must share rank")
        for ax in range(ndim):
            if ax != axis and t.shape[ax] != ts[0].shape[ax]:
                raise DimensionError(
                    f"concat extents differ off-axis: {ts[0].shape} vs {t.shape}")
    out = np.concatenate([t.data for t in ts], axis=axis)
    return _record("concat", ts, out, ctx=axis)


def _concat_fwd(vals, ctx):
    return np.concatenate(vals, axis=ctx)


def _concat_bwd(g, vals, out, ctx, need):
    contribs = []
    start = 0
    for v, n in zip(vals, need):
        width = v.shape[ctx]
        if n:
            key = [slice(None)] * g.ndim
            key[ctx] = slice(start, start + width)
            contribs.append(g[tuple(key)])
        else:
            contribs.append(None)
        start += width
    return contribs


def slice_(x, starts: Sequence[int], stops: Sequence[int]) -> Tensor:
    """Hyperrectangle slice `x[starts[0]:stops[0], ...]` over all axes."""
    x = as_tensor(x)
    _check_not_empty(x)
    if len(starts) != x.ndim or len(stops) != x.ndim:
        raise DimensionError(
            f"slice bounds must cover all {x.ndim} axes of shape {x.shape}")
    key = []
    for ax, (s, e) in enumerate(zip(starts, stops)):
        n = x.shape[ax]
        if not (0 <= s < e <= n):
            raise DomainError(
                f"slice [{s}:{e}] invalid for axis {ax} of extent {n}")
        key.append(slice(s, e))
    key = tuple(key)
    return _record("slice", (x,), x.data[key].copy(), ctx=key)


def _slice_fwd(vals, ctx):
    return vals[0][ctx].copy()


def _slice_bwd(g, vals, out, ctx, need):
    return (_SliceScatter(ctx, g),)


def sigmoid(x) -> Tensor:
    """Logistic function, overflow-safe."""
    x = as_tensor(x)
    _check_not_empty(x)
    return _record("sigmoid", (x,), _stable_sigmoid(x.data))


def _sigmoid_fwd(vals, ctx):
    return _stable_sigmoid(vals[0])


def _sigmoid_bwd(g, vals, out, ctx, need):
    return (g * out * (1.0 - out),)


def tanh(x) -> Tensor:
    """Hyperbolic tangent."""
    x = as_tensor(x)
    _check_not_empty(x)
    return _record("tanh", (x,), np.tanh(x.data))


def _tanh_fwd(vals, ctx):
    return np.tanh(vals[0])


def _tanh_bwd(g, vals, out, ctx, need):
    return (g * (1.0 - out * out),)


def softplus(x) -> Tensor:
    """log(1 + e^x) computed without overflow for large |x|."""
    x = as_tensor(x)
    _check_not_empty(x)
    return _record("softplus", (x,), np.logaddexp(0.0, x.data))


def _softplus_fwd(vals, ctx):
    return np.logaddexp(0.0, vals[0])


def _softplus_bwd(g, vals, out, ctx, need):
    return (g * _stable_sigmoid(vals[0]),)


def softmax_rows(x) -> Tensor:
    """Softmax along the last axis, stabilized by the row maximum."""
    x = as_tensor(x)
    _check_not_empty(x)
    return _record("softmax-rows", (x,), _softmax(x.data))


def _softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _softmax_fwd(vals, ctx):
    return _softmax(vals[0])


def _softmax_bwd(g, vals, out, ctx, need):
    dot = (g * out).sum(axis=-1, keepdims=True)
    return (out * (g - dot),)


def log(x) -> Tensor:
    """Natural logarithm; the input must be strictly positive."""
    x = as_tensor(x)
    _check_not_empty(x)
    if np.any(x.data <= 0.0):
        raise DomainError("log requires strictly positive inputs")
    return _record("log", (x,), np.log(x.data))


def _log_fwd(vals, ctx):
    return np.log(vals[0])


def _log_bwd(g, vals, out, ctx, need):
    return (g / vals[0],)


def reduce_sum(x) -> Tensor:
    """Sum of all entries, as a scalar tensor."""
    x = as_tensor(x)
    _check_not_empty(x)
    return _record("sum", (x,), np.asarray(x.data.sum()))


def _sum_fwd(vals, ctx):
    return np.asarray(vals[0].sum())


def _sum_bwd(g, vals, out, ctx, need):
    return (np.full(vals[0].shape, float(g)),)


def reduce_mean(x) -> Tensor:
    """Arithmetic mean of all entries, as a scalar tensor."""
    x = as_tensor(x)
    _check_not_empty(x)
    return _record("mean", (x,), np.asarray(x.data.mean()))


def _mean_fwd(vals, ctx):
    return np.asarray(vals[0].mean())


def _mean_bwd(g, vals, out, ctx, need):
    v = vals[0]
    return (np.full(v.shape, float(g) / v.size),)


def _reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Internal view change; not part of the public primitive set."""
    x = as_tensor(x)
    if int(np.prod(shape)) != x.size:
        raise DimensionError(f"cannot reshape {x.shape} to {shape}")
    return _record("reshape", (x,), x.data.reshape(shape).copy(), ctx=shape)


def _reshape_fwd(vals, ctx):
    return vals[0].reshape(ctx).copy()


def _reshape_bwd(g, vals, out, ctx, need):
    return (g.reshape(vals[0].shape),)


_FORWARD: dict[str, Callable] = {
    "matmul": _matmul_fwd,
    "add": _add_fwd,
    "multiply": _multiply_fwd,
    "concat": _concat_fwd,
    "slice": _slice_fwd,
    "sigmoid": _sigmoid_fwd,
    "tanh": _tanh_fwd,
    "softplus": _softplus_fwd,
    "softmax-rows": _softmax_fwd,
    "log": _log_fwd,
    "sum": _sum_fwd,
    "mean": _mean_fwd,
    "reshape": _reshape_fwd,
}

_BACKWARD: dict[str, Callable] = {
    "matmul": _matmul_bwd,
    "add": _add_bwd,
    "multiply": _multiply_bwd,
    "concat": _concat_bwd,
    "slice": _slice_bwd,
    "sigmoid": _sigmoid_bwd,
    "tanh": _tanh_bwd,
    "softplus": _softplus_bwd,
    "softmax-rows": _softmax_bwd,
    "log": _log_bwd,
    "sum": _sum_bwd,
    "mean": _mean_bwd,
    "reshape": _reshape_bwd,
}


def primitive_forward(op_kind: str, *inputs, axis: int = 0,
                      starts: Sequence[int] | None = None,
                      stops: Sequence[int] | None = None) -> Tensor:
    """Apply one of the named primitives, recording it on the active tape."""
    if op_kind == "matmul":
        return matmul(*inputs)
    if op_kind == "add":
        return add(*inputs)
    if op_kind == "multiply":
        return multiply(*inputs)
    if op_kind == "concat":
        return concat(inputs, axis=axis)
    if op_kind == "slice":
        (x,) = inputs
        if starts is None or stops is None:
            raise ContractError("slice requires starts= and stops=")
        return slice_(x, starts, stops)
    if op_kind == "sigmoid":
        return sigmoid(*inputs)
    if op_kind == "tanh":
        return tanh(*inputs)
    if op_kind == "softplus":
        return softplus(*inputs)
    if op_kind == "softmax-rows":
        return softmax_rows(*inputs)
    if op_kind == "log":
        return log(*inputs)
    if op_kind == "sum":
        return reduce_sum(*inputs)
    if op_kind == "mean":
        return reduce_mean(*inputs)
    raise ContractError(f"unknown op kind {op_kind!r}; expected one of {OP_KINDS}")


# --------------------------------------------------------------------------
# Stabilized two-class cross-entropy, composed from the primitives above


def cross_entropy_mean(logits: Tensor, labels) -> Tensor:
    """Batch mean of `-log softmax(logits)[label]` for two-class logits.

    Uses the identity `-log softmax(z)[y] = softplus(z_other - z_y)`, which
    stays finite for arbitrarily confident logits (the log-sum-exp trick in
    softplus form).  `labels` is an integer array of 0/1 values.
    """
    logits = as_tensor(logits)
    if logits.ndim != 2 or logits.shape[1] != 2:
        raise DimensionError(
            f"cross_entropy_mean expects [n, 2] logits, got {logits.shape}")
    y = np.asarray(labels)
    n = logits.shape[0]
    if y.shape != (n,):
        raise DimensionError(f"labels shape {y.shape} does not match batch {n}")
    if not np.isin(y, (0, 1)).all():
        raise DomainError("labels must be 0 or 1")
    z0 = slice_(logits, (0, 0), (n, 1))
    z1 = slice_(logits, (0, 1), (n, 2))
    diff = add(z1, multiply(z0, Tensor(-1.0)))
    mask1 = Tensor(y.astype(np.float64).reshape(n, 1))
    mask0 = Tensor(1.0 - mask1.data)
    nll = add(multiply(mask0, softplus(diff)),
              multiply(mask1, softplus(multiply(diff, Tensor(-1.0)))))
    return reduce_mean(nll)


# --------------------------------------------------------------------------
# Finite-difference check


def grad_check(fn: Callable[[Mapping[str, Tensor]], Tensor],
               params: Mapping[str, Tensor | np.ndarray],
               step: float = 1e-5) -> float:
    """Compare analytic gradients of `fn` against central finite differences.

    `fn` maps a dict of bound parameter tensors to a scalar tensor and must
    be a pure function of those parameters (freeze any randomness outside).
    Returns max over parameter coordinates of
    ``|analytic - fd| / max(1, |analytic|)``.
    """
    if step <= 0.0:
        raise ContractError("fd step must be positive")
    base = {name: np.array(as_tensor(v).data, dtype=np.float64)
            for name, v in params.items()}

    tape = GradTape()
    with tape:
        bound = {name: tape.parameter(name, v) for name, v in base.items()}
        out = fn(bound)
    if out.data.size != 1:
        raise ContractError("grad_check requires a scalar-valued function")
    if not np.isfinite(out.data).all():
        raise DomainError("function evaluated to a non-finite value")
    analytic = tape.backward(out)

    def evaluate(values: dict[str, np.ndarray]) -> float:
        r = fn({name: Tensor(v) for name, v in values.items()})
        v = float(r.data.reshape(()))
        if not math.isfinite(v):
            raise DomainError("function evaluated to a non-finite value")
        return v

    worst = 0.0
    for name in base:
        flat = base[name].reshape(-1)
        a = analytic[name].data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = evaluate(base)
            flat[i] = orig - step
            f_minus = evaluate(base)
            flat[i] = orig
            fd = (f_plus - f_minus) / (2.0 * step)
            err = abs(a[i] - fd) / max(1.0, abs(a[i]))
            if err > worst:
                worst = err
    return worst

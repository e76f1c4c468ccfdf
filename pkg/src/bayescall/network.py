"""Recurrent layers and the two classifier topologies.

Both models share the same trunk: two bidirectional LSTM layers scanning
the read rows of an encoded pair matrix, followed by two dense layers on
the final-step concatenated features.  The deterministic head uses plain
dense kernels; the variational head replaces both dense layers with
mean-field Gaussian layers sampled by Flipout during training.

Gate order inside every LSTM parameter block is (input, forget, cell
candidate, output); the order is part of the checkpoint contract.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import variational as vr
from .autodiff import GradTape, Tensor
from .errors import ContractError, DimensionError, DomainError

__all__ = [
    "HEAD_DETERMINISTIC",
    "HEAD_VARIATIONAL",
    "LSTM_LAYERS",
    "DENSE_LAYERS",
    "INIT_SIGMA",
    "DenseParams",
    "LstmParams",
    "ModelSpec",
    "Model",
    "lstm_cell_step",
    "bilstm_forward",
    "model_forward",
    "init_params",
    "param_names",
]

HEAD_DETERMINISTIC = "deterministic"
HEAD_VARIATIONAL = "variational-flipout"

LSTM_LAYERS = ("lstm1_fwd", "lstm1_bwd", "lstm2_fwd", "lstm2_bwd")
DENSE_LAYERS = ("dense1", "dense2")

#: Initial posterior scale for variational layers: rho = softplus^-1(0.05).
INIT_SIGMA = 0.05


@dataclass(frozen=True)
class DenseParams:
    """Kernel `[in, out]` and bias `[out]` of a deterministic dense layer."""

    kernel: Tensor
    bias: Tensor

    def __post_init__(self):
        if self.kernel.ndim != 2 or self.bias.ndim != 1 \
                or self.kernel.shape[1] != self.bias.shape[0]:
            raise DimensionError(
                f"inconsistent dense shapes: kernel {self.kernel.shape}, "
                f"bias {self.bias.shape}")


@dataclass(frozen=True)
class LstmParams:
    """One direction of one LSTM layer.

    `kernel` is `[in, 4h]`, `recurrent` `[h, 4h]`, `bias` `[4h]`, with the
    four gate blocks stored in (i, f, g, o) order along the last axis.
    """

    kernel: Tensor
    recurrent: Tensor
    bias: Tensor

    def __post_init__(self):
        k, r, b = self.kernel, self.recurrent, self.bias
        if k.ndim != 2 or r.ndim != 2 or b.ndim != 1:
            raise DimensionError("LSTM parameters must be 2-D, 2-D and 1-D")
        h = r.shape[0]
        if r.shape[1] != 4 * h or k.shape[1] != 4 * h or b.shape[0] != 4 * h:
            raise DimensionError(
                f"inconsistent LSTM shapes: kernel {k.shape}, "
                f"recurrent {r.shape}, bias {b.shape}")

    @property
    def hidden(self) -> int:
        return self.recurrent.shape[0]


@dataclass(frozen=True)
class ModelSpec:
    """Architecture hyperparameters of one classifier.

    `features` must equal the encoded pair-matrix width (2w loci times 3
    channels); the output head always has exactly two logits.
    """

    depth: int
    features: int
    hidden1: int = 32
    hidden2: int = 32
    dense_units: int = 32
    head: str = HEAD_DETERMINISTIC

    n_classes = 2

    def __post_init__(self):
        for name in ("depth", "features", "hidden1", "hidden2", "dense_units"):
            v = getattr(self, name)
            if not (isinstance(v, int) and v >= 1):
                raise ContractError(f"spec.{name} must be a positive int, got {v!r}")
        if self.head not in (HEAD_DETERMINISTIC, HEAD_VARIATIONAL):
            raise ContractError(f"unknown head kind {self.head!r}")

    @property
    def is_variational(self) -> bool:
        return self.head == HEAD_VARIATIONAL

    def dense_dims(self, layer: str) -> tuple[int, int]:
        if layer == "dense1":
            return 2 * self.hidden2, self.dense_units
        if layer == "dense2":
            return self.dense_units, self.n_classes
        raise ContractError(f"unknown dense layer {layer!r}")

    def lstm_dims(self, layer: str) -> tuple[int, int]:
        """(input width, hidden size) of one LSTM direction."""
        if layer.startswith("lstm1"):
            return self.features, self.hidden1
        return 2 * self.hidden1, self.hidden2

    def to_dict(self) -> dict:
        return {
            "depth": self.depth,
            "features": self.features,
            "hidden1": self.hidden1,
            "hidden2": self.hidden2,
            "dense_units": self.dense_units,
            "head": self.head,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(depth=int(d["depth"]), features=int(d["features"]),
                   hidden1=int(d["hidden1"]), hidden2=int(d["hidden2"]),
                   dense_units=int(d["dense_units"]), head=str(d["head"]))


# --------------------------------------------------------------------------
# LSTM cells and bidirectional scans


def _cell_from_projection(zx: Tensor, h: Tensor, c: Tensor,
                          params: LstmParams) -> tuple[Tensor, Tensor]:
    """One cell step given the precomputed input projection `zx = xW + b`."""
    hid = params.hidden
    n = zx.shape[0]
    z = ad.add(zx, ad.matmul(h, params.recurrent))
    i = ad.sigmoid(ad.slice_(z, (0, 0), (n, hid)))
    f = ad.sigmoid(ad.slice_(z, (0, hid), (n, 2 * hid)))
    g = ad.tanh(ad.slice_(z, (0, 2 * hid), (n, 3 * hid)))
    o = ad.sigmoid(ad.slice_(z, (0, 3 * hid), (n, 4 * hid)))
    c2 = ad.add(ad.multiply(f, c), ad.multiply(i, g))
    h2 = ad.multiply(o, ad.tanh(c2))
    return h2, c2


def lstm_cell_step(x_t, h, c, params: LstmParams) -> tuple[Tensor, Tensor]:
    """Standard LSTM cell step; accepts vectors or `[n, .]` batches.

    i,f,o = sigmoid(.), g = tanh(.), c' = f*c + i*g, h' = o*tanh(c').
    """
    x_t, h, c = ad.as_tensor(x_t), ad.as_tensor(h), ad.as_tensor(c)
    vector_in = x_t.ndim == 1
    if vector_in:
        x_t = ad._reshape(x_t, (1, x_t.shape[0]))
        h = ad._reshape(h, (1, h.shape[0]))
        c = ad._reshape(c, (1, c.shape[0]))
    if x_t.shape[1] != params.kernel.shape[0]:
        raise DimensionError(
            f"input width {x_t.shape[1]} != kernel fan-in {params.kernel.shape[0]}")
    if h.shape[1] != params.hidden or c.shape[1] != params.hidden:
        raise DimensionError(
            f"state width must be {params.hidden}, got h {h.shape}, c {c.shape}")
    zx = ad.add(ad.matmul(x_t, params.kernel), params.bias)
    h2, c2 = _cell_from_projection(zx, h, c, params)
    if vector_in:
        h2 = ad._reshape(h2, (h2.shape[1],))
        c2 = ad._reshape(c2, (c2.shape[1],))
    return h2, c2


def _scan_direction(x_flat: Tensor, batch: int, depth: int,
                    params: LstmParams, reverse: bool) -> list[Tensor]:
    """Run one LSTM direction over step-major flattened input.

    `x_flat` stacks the per-step `[batch, in]` blocks along axis 0, so the
    whole input projection is a single matmul; the recurrence then slices
    one block per step.  Returns the hidden state after each step, indexed
    by step position (not scan order).
    """
    hid = params.hidden
    proj = ad.add(ad.matmul(x_flat, params.kernel), params.bias)
    h = Tensor(np.zeros((batch, hid)))
    c = Tensor(np.zeros((batch, hid)))
    states: list[Tensor | None] = [None] * depth
    order = range(depth - 1, -1, -1) if reverse else range(depth)
    for t in order:
        zx = ad.slice_(proj, (t * batch, 0), ((t + 1) * batch, 4 * hid))
        h, c = _cell_from_projection(zx, h, c, params)
        states[t] = h
    return states


def bilstm_forward(seq, fwd: LstmParams, bwd: LstmParams) -> Tensor:
    """Bidirectional scan over a `[d, f]` sequence.

    Row t of the result concatenates the forward state after steps 1..t
    with the backward state after steps d..t, giving a `[d, 2h]` tensor.
    """
    seq = ad.as_tensor(seq)
    if seq.ndim != 2:
        raise DimensionError(f"sequence must be [depth, features], got {seq.shape}")
    if seq.shape[0] < 1:
        raise DomainError("sequence must have at least one step")
    if fwd.hidden != bwd.hidden:
        raise DimensionError("forward and backward hidden sizes differ")
    d = seq.shape[0]
    f_states = _scan_direction(seq, 1, d, fwd, reverse=False)
    b_states = _scan_direction(seq, 1, d, bwd, reverse=True)
    rows = [ad.concat((f_states[t], b_states[t]), axis=1) for t in range(d)]
    return ad.concat(rows, axis=0)


# --------------------------------------------------------------------------
# Parameter initialization


def param_names(spec: ModelSpec) -> tuple[str, ...]:
    """Canonical parameter names of a model, in definition order."""
    names = []
    for layer in LSTM_LAYERS:
        names += [f"{layer}.kernel", f"{layer}.recurrent", f"{layer}.bias"]
    for layer in DENSE_LAYERS:
        if spec.is_variational:
            names += [f"{layer}.kernel.mu", f"{layer}.kernel.rho",
                      f"{layer}.bias.mu", f"{layer}.bias.rho"]
        else:
            names += [f"{layer}.kernel", f"{layer}.bias"]
    return tuple(names)


def init_params(spec: ModelSpec, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Fresh parameter arrays for `spec`, in a documented draw order.

    Kernels (and variational kernel means) are uniform(-s, s) with
    s = 1/sqrt(fan-in); recurrent kernels use the hidden size as fan-in.
    Biases start at zero except the forget-gate block, which starts at 1 so
    early training can carry state across the full read depth.  Variational
    pre-scales start at softplus^-1(INIT_SIGMA).

    Draws happen layer by layer in `LSTM_LAYERS` then `DENSE_LAYERS` order:
    per LSTM layer the kernel then the recurrent kernel; per dense layer
    the kernel (mean).
    """
    params: dict[str, np.ndarray] = {}

    def uniform(fan_in: int, shape: tuple[int, ...]) -> np.ndarray:
        s = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-s, s, size=shape)

    for layer in LSTM_LAYERS:
        fan_in, hid = spec.lstm_dims(layer)
        params[f"{layer}.kernel"] = uniform(fan_in, (fan_in, 4 * hid))
        params[f"{layer}.recurrent"] = uniform(hid, (hid, 4 * hid))
        bias = np.zeros(4 * hid)
        bias[hid:2 * hid] = 1.0
        params[f"{layer}.bias"] = bias

    rho0 = vr.softplus_inverse(INIT_SIGMA)
    for layer in DENSE_LAYERS:
        fan_in, fan_out = spec.dense_dims(layer)
        if spec.is_variational:
            params[f"{layer}.kernel.mu"] = uniform(fan_in, (fan_in, fan_out))
            params[f"{layer}.kernel.rho"] = np.full((fan_in, fan_out), rho0)
            params[f"{layer}.bias.mu"] = np.zeros(fan_out)
            params[f"{layer}.bias.rho"] = np.full(fan_out, rho0)
        else:
            params[f"{layer}.kernel"] = uniform(fan_in, (fan_in, fan_out))
            params[f"{layer}.bias"] = np.zeros(fan_out)
    return params


# --------------------------------------------------------------------------
# Full model


class Model:
    """A model spec plus its parameter arrays.

    Parameters are owned as plain numpy arrays; `bind` wraps them as tape
    parameters for a training step or as constants for inference.
    """

    def __init__(self, spec: ModelSpec, params: dict[str, np.ndarray]):
        expected = set(param_names(spec))
        got = set(params)
        if got != expected:
            missing = sorted(expected - got)
            extra = sorted(got - expected)
            raise ContractError(
                f"parameter set mismatch: missing {missing}, unexpected {extra}")
        self.spec = spec
        self.params = {k: np.ascontiguousarray(v, dtype=np.float64)
                       for k, v in params.items()}

    @classmethod
    def initialize(cls, spec: ModelSpec, rng: np.random.Generator) -> "Model":
        return cls(spec, init_params(spec, rng))

    def bind(self, tape: GradTape | None) -> dict[str, Tensor]:
        if tape is None:
            return {k: Tensor(v) for k, v in self.params.items()}
        return {k: tape.parameter(k, v) for k, v in sorted(self.params.items())}

    def lstm_params(self, bound: dict[str, Tensor], layer: str) -> LstmParams:
        return LstmParams(bound[f"{layer}.kernel"], bound[f"{layer}.recurrent"],
                          bound[f"{layer}.bias"])

    def dense_params(self, bound: dict[str, Tensor], layer: str):
        if self.spec.is_variational:
            return vr.GaussianVariationalParams(
                bound[f"{layer}.kernel.mu"], bound[f"{layer}.kernel.rho"],
                bound[f"{layer}.bias.mu"], bound[f"{layer}.bias.rho"])
        return DenseParams(bound[f"{layer}.kernel"], bound[f"{layer}.bias"])

    def draw_noise(self, mode: str, batch_size: int,
                   rng: np.random.Generator) -> dict[str, vr.DenseNoise]:
        """Pre-draw all randomness for one forward pass.

        Draw order: for each layer in `DENSE_LAYERS`, the layer's noise in
        `draw_dense_noise` order.  Mean mode draws nothing.
        """
        if mode == "mean":
            return {}
        if not self.spec.is_variational:
            raise ContractError(
                f"mode {mode!r} requires the variational head, this model is "
                f"{self.spec.head}")
        noise = {}
        for layer in DENSE_LAYERS:
            fan_in, fan_out = self.spec.dense_dims(layer)
            bs = batch_size if mode == "flipout" else None
            noise[layer] = vr.draw_dense_noise(fan_in, fan_out, rng, batch_size=bs)
        return noise

    def _dense_forward(self, x: Tensor, layer: str, bound: dict[str, Tensor],
                       mode: str, noise: dict[str, vr.DenseNoise]) -> Tensor:
        p = self.dense_params(bound, layer)
        if not self.spec.is_variational:
            return ad.add(ad.matmul(x, p.kernel), p.bias)
        if mode == "mean":
            return ad.add(ad.matmul(x, p.kernel_mu), p.bias_mu)
        if mode == "sampled":
            return vr.reparam_forward(x, p, noise=noise[layer])
        if mode == "flipout":
            return vr.flipout_forward(x, p, noise=noise[layer])
        raise ContractError(f"unknown weight mode {mode!r}")

    def logits_from_flat(self, bound: dict[str, Tensor], x_flat: Tensor,
                         batch: int, mode: str,
                         noise: dict[str, vr.DenseNoise]) -> Tensor:
        """Two-class logits `[batch, 2]` from step-major flattened input."""
        spec = self.spec
        d = spec.depth
        if x_flat.shape != (d * batch, spec.features):
            raise DimensionError(
                f"expected flattened input {(d * batch, spec.features)}, "
                f"got {x_flat.shape}")
        if mode in ("sampled", "flipout") and not spec.is_variational:
            raise ContractError(
                f"mode {mode!r} is invalid for the deterministic head")

        l1f = _scan_direction(x_flat, batch, d,
                              self.lstm_params(bound, "lstm1_fwd"), False)
        l1b = _scan_direction(x_flat, batch, d,
                              self.lstm_params(bound, "lstm1_bwd"), True)
        layer2_in = ad.concat(
            [ad.concat((l1f[t], l1b[t]), axis=1) for t in range(d)], axis=0)
        l2f = _scan_direction(layer2_in, batch, d,
                              self.lstm_params(bound, "lstm2_fwd"), False)
        l2b = _scan_direction(layer2_in, batch, d,
                              self.lstm_params(bound, "lstm2_bwd"), True)
        feats = ad.concat((l2f[d - 1], l2b[d - 1]), axis=1)

        hidden = ad.tanh(self._dense_forward(feats, "dense1", bound, mode, noise))
        return self._dense_forward(hidden, "dense2", bound, mode, noise)

    def forward(self, x, mode: str = "mean",
                rng: np.random.Generator | None = None) -> Tensor:
        """Logits `[2]` for one encoded `[depth, features]` example.

        `mode` is "mean" (use the posterior means) or "sampled" (one
        reparameterized weight draw, shared across the whole forward pass);
        sampled mode requires a generator and the variational head.
        """
        x = ad.as_tensor(x)
        if x.ndim != 2:
            raise DimensionError(f"input must be [depth, features], got {x.shape}")
        if mode == "sampled":
            if not self.spec.is_variational:
                raise ContractError(
                    "sampled mode is invalid for the deterministic head")
            if rng is None:
                raise ContractError("sampled mode requires an RNG stream")
        elif mode != "mean":
            raise ContractError(f"unknown weight mode {mode!r}")
        noise = self.draw_noise(mode, 1, rng) if mode == "sampled" else {}
        bound = self.bind(None)
        logits = self.logits_from_flat(bound, x, 1, mode, noise)
        return ad._reshape(logits, (2,))

    def kl_total(self, bound: dict[str, Tensor],
                 prior: vr.GaussianPrior) -> Tensor:
        """Full-model KL(Q || prior), summed over both variational layers."""
        if not self.spec.is_variational:
            raise ContractError("kl_total requires the variational head")
        total = None
        for layer in DENSE_LAYERS:
            part = vr.kl_gaussian_diag(self.dense_params(bound, layer), prior)
            total = part if total is None else ad.add(total, part)
        return total

    def copy(self) -> "Model":
        return Model(self.spec, {k: v.copy() for k, v in self.params.items()})


def model_forward(x, spec: ModelSpec, params: dict[str, np.ndarray],
                  mode: str = "mean",
                  rng: np.random.Generator | None = None) -> Tensor:
    """Functional wrapper around :meth:`Model.forward`."""
    return Model(spec, params).forward(x, mode, rng)

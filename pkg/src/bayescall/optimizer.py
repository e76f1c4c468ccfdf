"""Adam optimizer over named parameter dictionaries.

Update rule with bias-corrected moments:
    m <- b1*m + (1-b1)*g        mhat = m / (1 - b1^t)
    v <- b2*v + (1-b2)*g^2      vhat = v / (1 - b2^t)
    theta <- theta - lr * mhat / (sqrt(vhat) + eps)

Defaults are the published ones (lr=0.001, b1=0.9, b2=0.999, eps=1e-8).
State is never aliased: `adam_step` returns fresh parameter and state
objects, and the optimizer state is not checkpointed — training resumes
fresh by design.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .errors import DimensionError, TrainingError

__all__ = ["AdamState", "adam_step"]


@dataclass(frozen=True)
class AdamState:
    """First/second moment estimates plus the step counter."""

    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray],
              grads: dict[str, np.ndarray | Tensor],
              state: AdamState) -> tuple[dict[str, np.ndarray], AdamState]:
    """One Adam update over every named parameter.

    Moments are zero-initialized on first use.  Raises
    :class:`TrainingError` naming the parameter if its gradient is
    non-finite, and :class:`DimensionError` on any shape mismatch.
    """
    t = state.step + 1
    lr, b1, b2, eps = state.learning_rate, state.beta1, state.beta2, state.eps
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t

    new_params: dict[str, np.ndarray] = {}
    new_m: dict[str, np.ndarray] = {}
    new_v: dict[str, np.ndarray] = {}
    for name, theta in params.items():
        if name not in grads:
            raise DimensionError(f"missing gradient for parameter {name!r}")
        g = grads[name]
        g = g.data if isinstance(g, Tensor) else np.asarray(g, dtype=np.float64)
        if g.shape != theta.shape:
            raise DimensionError(
                f"gradient shape {g.shape} != parameter shape {theta.shape} "
                f"for {name!r}")
        if not np.isfinite(g).all():
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
        m_prev = state.m.get(name)
        v_prev = state.v.get(name)
        m = (1.0 - b1) * g if m_prev is None else b1 * m_prev + (1.0 - b1) * g
        v = (1.0 - b2) * g * g if v_prev is None else b2 * v_prev + (1.0 - b2) * g * g
        new_params[name] = theta - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        new_m[name] = m
        new_v[name] = v

    new_state = AdamState(learning_rate=lr, beta1=b1, beta2=b2, eps=eps,
                          step=t, m=new_m, v=new_v)
    return new_params, new_state

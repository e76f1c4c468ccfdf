"""Mean-field Gaussian variational dense layers and the minibatch objective.

A variational dense layer keeps a mean and a pre-scale for every kernel and
bias entry; the positive scale is `sigma = softplus(rho)`.  Three sampling
routes are provided:

* plain reparameterization (`sample_weights_reparam`): one weight draw
  shared by every row of the batch — one network from the ensemble;
* Flipout (`flipout_forward`): a shared Gaussian kernel perturbation
  decorrelated across batch rows by per-row Rademacher sign pairs;
* the closed-form KL divergence to a zero-mean isotropic Gaussian prior.

`elbo_minibatch` combines them into the training objective
``total = nll + kl_weight * kl`` with ``kl_weight = 1 / num_batches`` so the
per-epoch sum of weighted KL terms reconstructs the full KL exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import GradTape, Tensor
from .errors import ContractError, DomainError

__all__ = [
    "GaussianVariationalParams",
    "GaussianPrior",
    "DenseNoise",
    "LossReport",
    "softplus_sigma",
    "softplus_inverse",
    "kl_gaussian_diag",
    "draw_dense_noise",
    "sample_weights_reparam",
    "reparam_forward",
    "flipout_forward",
    "elbo_minibatch",
    "standard_minibatch",
]


def softplus_sigma(rho: float) -> float:
    """Positive posterior scale `sigma = log(1 + e^rho)`, overflow-safe."""
    return float(np.logaddexp(0.0, rho))


def softplus_inverse(sigma: float) -> float:
    """Pre-scale rho such that softplus(rho) ~= sigma (sigma > 0)."""
    if sigma <= 0.0:
        raise DomainError("softplus_inverse requires sigma > 0")
    return float(math.log(math.expm1(sigma)))


@dataclass(frozen=True)
class GaussianVariationalParams:
    """Per-weight means and pre-scales of one variational dense layer.

    The kernel is `[in, out]`, the bias `[out]`; their scales are
    `softplus(rho)` elementwise, which keeps every sigma strictly positive
    unless rho underflows to exactly zero sigma.
    """

    kernel_mu: Tensor
    kernel_rho: Tensor
    bias_mu: Tensor
    bias_rho: Tensor

    def __post_init__(self):
        km, kr = self.kernel_mu, self.kernel_rho
        bm, br = self.bias_mu, self.bias_rho
        if km.shape != kr.shape or bm.shape != br.shape:
            raise ContractError("mu and rho shapes must match")
        if km.ndim != 2 or bm.ndim != 1 or km.shape[1] != bm.shape[0]:
            raise ContractError(
                f"inconsistent layer shapes: kernel {km.shape}, bias {bm.shape}")

    @property
    def fan_in(self) -> int:
        return self.kernel_mu.shape[0]

    @property
    def fan_out(self) -> int:
        return self.kernel_mu.shape[1]


@dataclass(frozen=True)
class GaussianPrior:
    """Zero-mean isotropic Gaussian weight prior with scale `sigma`."""

    sigma: float = 1.0

    def __post_init__(self):
        if not (self.sigma > 0.0 and math.isfinite(self.sigma)):
            raise DomainError(f"prior sigma must be positive, got {self.sigma}")


@dataclass(frozen=True)
class DenseNoise:
    """Frozen randomness for one variational dense layer forward pass.

    Draw order (one seeded stream): `kernel_eps`, then `bias_eps`, then —
    only for Flipout — the Rademacher signs `s_signs` and `r_signs`.
    """

    kernel_eps: np.ndarray
    bias_eps: np.ndarray
    s_signs: np.ndarray | None = None
    r_signs: np.ndarray | None = None


def draw_dense_noise(fan_in: int, fan_out: int, rng: np.random.Generator,
                     batch_size: int | None = None) -> DenseNoise:
    """Draw one layer's noise; pass `batch_size` to include Flipout signs."""
    kernel_eps = rng.standard_normal((fan_in, fan_out))
    bias_eps = rng.standard_normal(fan_out)
    if batch_size is None:
        return DenseNoise(kernel_eps, bias_eps)
    s = rng.integers(0, 2, size=(batch_size, fan_in)).astype(np.float64) * 2.0 - 1.0
    r = rng.integers(0, 2, size=(batch_size, fan_out)).astype(np.float64) * 2.0 - 1.0
    return DenseNoise(kernel_eps, bias_eps, s, r)


def kl_gaussian_diag(params: GaussianVariationalParams,
                     prior: GaussianPrior) -> Tensor:
    """Closed-form KL(Q || prior) summed over all kernel and bias weights.

    Per weight: ``log(sigma_p / sigma) + (sigma^2 + mu^2) / (2 sigma_p^2) - 1/2``.
    Returns a scalar tensor so gradients flow to every mu and rho.
    """
    sp = prior.sigma
    log_sp = math.log(sp)
    inv_two_var = 0.5 / (sp * sp)
    total = None
    for mu, rho in ((params.kernel_mu, params.kernel_rho),
                    (params.bias_mu, params.bias_rho)):
        sigma = ad.softplus(rho)
        neg_log_sigma = ad.multiply(ad.log(sigma), Tensor(-1.0))
        moment = ad.multiply(
            ad.add(ad.multiply(sigma, sigma), ad.multiply(mu, mu)),
            Tensor(inv_two_var))
        elem = ad.add(ad.add(neg_log_sigma, moment), Tensor(log_sp - 0.5))
        part = ad.reduce_sum(elem)
        total = part if total is None else ad.add(total, part)
    return total


def sample_weights_reparam(params: GaussianVariationalParams,
                           rng: np.random.Generator | None = None,
                           noise: DenseNoise | None = None
                           ) -> tuple[Tensor, Tensor]:
    """One reparameterized weight draw `w = mu + softplus(rho) * eps`.

    Returns `(kernel, bias)` tensors differentiable with respect to mu and
    rho.  Either a generator or pre-drawn `noise` must be supplied.
    """
    if noise is None:
        if rng is None:
            raise ContractError("sample_weights_reparam needs rng or noise")
        noise = draw_dense_noise(params.fan_in, params.fan_out, rng)
    kernel = ad.add(params.kernel_mu,
                    ad.multiply(ad.softplus(params.kernel_rho),
                                Tensor(noise.kernel_eps)))
    bias = ad.add(params.bias_mu,
                  ad.multiply(ad.softplus(params.bias_rho),
                              Tensor(noise.bias_eps)))
    return kernel, bias


def reparam_forward(x: Tensor, params: GaussianVariationalParams,
                    rng: np.random.Generator | None = None,
                    noise: DenseNoise | None = None) -> Tensor:
    """Dense forward with one batch-shared reparameterized weight draw."""
    kernel, bias = sample_weights_reparam(params, rng, noise)
    return ad.add(ad.matmul(x, kernel), bias)


def flipout_forward(x: Tensor, params: GaussianVariationalParams,
                    rng: np.random.Generator | None = None,
                    noise: DenseNoise | None = None) -> Tensor:
    """Dense forward with pseudo-independent per-row weight perturbations.

    ``Y = X mu + ((X * S) (sigma * E)) * R + bias_sample`` where `E` is a
    shared Gaussian kernel perturbation and `S`, `R` are per-row Rademacher
    signs, so row `n` effectively sees ``dW_n = (sigma*E) * (s_n r_n^T)``.
    The bias is sampled once per call by plain reparameterization.
    """
    x = ad.as_tensor(x)
    if x.ndim != 2:
        raise ContractError(f"flipout input must be [batch, in], got {x.shape}")
    if x.shape[0] < 1 or x.size == 0:
        raise DomainError("flipout requires a non-empty batch")
    if x.shape[1] != params.fan_in:
        raise ContractError(
            f"input width {x.shape[1]} != layer fan-in {params.fan_in}")
    if noise is None:
        if rng is None:
            raise ContractError("flipout_forward needs rng or noise")
        noise = draw_dense_noise(params.fan_in, params.fan_out, rng,
                                 batch_size=x.shape[0])
    if noise.s_signs is None or noise.r_signs is None:
        raise ContractError("flipout noise is missing Rademacher signs")

    sigma_k = ad.softplus(params.kernel_rho)
    perturbed = ad.multiply(
        ad.matmul(ad.multiply(x, Tensor(noise.s_signs)),
                  ad.multiply(sigma_k, Tensor(noise.kernel_eps))),
        Tensor(noise.r_signs))
    bias = ad.add(params.bias_mu,
                  ad.multiply(ad.softplus(params.bias_rho),
                              Tensor(noise.bias_eps)))
    return ad.add(ad.add(ad.matmul(x, params.kernel_mu), perturbed), bias)


@dataclass(frozen=True)
class LossReport:
    """One minibatch objective: `total = nll + kl_weight * kl`."""

    nll: float
    kl: float
    kl_weight: float
    total: float


def _as_batch(batch) -> tuple[np.ndarray, np.ndarray]:
    x, y = batch
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if x.ndim != 3:
        raise ContractError(f"batch inputs must be [n, depth, features], got {x.shape}")
    if x.shape[0] == 0:
        raise DomainError("empty batch")
    if y.shape != (x.shape[0],):
        raise ContractError(f"labels shape {y.shape} != batch size {x.shape[0]}")
    return x, y


def _flatten_steps(x: np.ndarray) -> np.ndarray:
    """[n, d, f] -> step-major [d*n, f] so step t is rows t*n:(t+1)*n."""
    n, d, f = x.shape
    return np.ascontiguousarray(x.transpose(1, 0, 2).reshape(d * n, f))


def elbo_minibatch(model, batch, num_batches: int, rng: np.random.Generator,
                   prior: GaussianPrior = GaussianPrior(1.0),
                   sampling: str = "flipout",
                   return_grads: bool = False):
    """Single-sample negative-ELBO estimate on one minibatch.

    `nll` is the batch mean of the categorical cross-entropy under one
    weight draw; `kl` is the full-model closed-form divergence; the reported
    total uses ``kl_weight = 1 / num_batches``.  `sampling` selects Flipout
    (default) or the batch-shared reparameterized draw (``"shared"``).
    Returns a :class:`LossReport`; with `return_grads=True` returns
    `(report, grads, logits)` where `grads` covers every trainable
    parameter and `logits` is the `[n, 2]` array of the sampled forward
    pass (handy for logging training accuracy without a second pass).
    """
    if num_batches < 1:
        raise ContractError(f"num_batches must be >= 1, got {num_batches}")
    if sampling not in ("flipout", "shared"):
        raise ContractError(f"unknown sampling mode {sampling!r}")
    if not model.spec.is_variational:
        raise ContractError("elbo_minibatch requires a variational head")
    x, y = _as_batch(batch)
    n = x.shape[0]
    mode = "flipout" if sampling == "flipout" else "sampled"
    noise = model.draw_noise(mode, n, rng)
    x_flat = _flatten_steps(x)
    kl_weight = 1.0 / num_batches

    def build(bound):
        logits = model.logits_from_flat(bound, Tensor(x_flat), n, mode, noise)
        nll = ad.cross_entropy_mean(logits, y)
        kl = model.kl_total(bound, prior)
        total = ad.add(nll, ad.multiply(kl, Tensor(kl_weight)))
        return logits, nll, kl, total

    if return_grads:
        tape = GradTape()
        with tape:
            logits, nll, kl, total = build(model.bind(tape))
        grads = tape.backward(total)
        report = LossReport(nll.item(), kl.item(), kl_weight, total.item())
        return report, grads, logits.data
    _, nll, kl, total = build(model.bind(None))
    return LossReport(nll.item(), kl.item(), kl_weight, total.item())


def standard_minibatch(model, batch, return_grads: bool = False):
    """Plain cross-entropy objective for the deterministic head.

    Reported with `kl = 0` and `kl_weight = 0` so logs share one schema
    with the Bayesian path.  With `return_grads=True` returns
    `(report, grads, logits)` like :func:`elbo_minibatch`.
    """
    if model.spec.is_variational:
        raise ContractError("standard_minibatch requires the deterministic head")
    x, y = _as_batch(batch)
    n = x.shape[0]
    x_flat = _flatten_steps(x)

    def build(bound):
        logits = model.logits_from_flat(bound, Tensor(x_flat), n, "mean", {})
        return logits, ad.cross_entropy_mean(logits, y)

    if return_grads:
        tape = GradTape()
        with tape:
            logits, nll = build(model.bind(tape))
        grads = tape.backward(nll)
        v = nll.item()
        return LossReport(v, 0.0, 0.0, v), grads, logits.data
    _, nll = build(model.bind(None))
    v = nll.item()
    return LossReport(v, 0.0, 0.0, v)

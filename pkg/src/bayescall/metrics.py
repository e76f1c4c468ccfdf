"""Monte-Carlo predictive distributions, evaluation reports, histograms.

Prediction averages the softmax output over weight draws from the
variational posterior; for the deterministic head there is nothing to
draw, so a single mean-mode pass is used.  Reports carry the accuracy,
the mean predictive entropy in nats, the fraction of "uncertain" calls
(max class probability <= tau), and a histogram of the somatic-class
probability — the statistic compared between in-distribution and masked
out-of-distribution inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, _softmax
from .errors import ContractError, DomainError
from .network import Model
from .pileup import Dataset, encode_batch, mask_batch
from .variational import _flatten_steps

__all__ = [
    "PredictiveDistribution",
    "Histogram",
    "EvalReport",
    "OodSummary",
    "mc_predict",
    "predict_dataset",
    "evaluate",
    "ood_report",
    "predictive_entropy",
]

#: Probability pairs must renormalize to 1 within this tolerance.
PROB_SUM_TOL = 1e-9


def predictive_entropy(probs: np.ndarray) -> np.ndarray:
    """-sum p log p along the last axis, with 0 log 0 = 0."""
    p = np.asarray(probs, dtype=np.float64)
    terms = np.where(p > 0.0, p * np.log(np.where(p > 0.0, p, 1.0)), 0.0)
    return -terms.sum(axis=-1)


@dataclass(frozen=True)
class PredictiveDistribution:
    """MC-averaged class probabilities plus the per-draw values behind them."""

    probs: np.ndarray   # [2]
    draws: np.ndarray   # [n_mc, 2]

    def __post_init__(self):
        if self.draws.ndim != 2 or self.draws.shape[1] != 2:
            raise ContractError(f"draws must be [n_mc, 2], got {self.draws.shape}")
        if self.draws.shape[0] < 1:
            raise DomainError("need at least one Monte-Carlo draw")
        if abs(float(self.probs.sum()) - 1.0) > PROB_SUM_TOL:
            raise ContractError(f"probabilities sum to {self.probs.sum()!r}, not 1")

    @classmethod
    def from_draws(cls, draws: np.ndarray) -> "PredictiveDistribution":
        draws = np.asarray(draws, dtype=np.float64)
        return cls(draws.mean(axis=0), draws)

    @property
    def n_mc(self) -> int:
        return self.draws.shape[0]

    @property
    def entropy(self) -> float:
        return float(predictive_entropy(self.probs))


@dataclass(frozen=True)
class Histogram:
    """Counts over fixed bins; the last bin is closed on the right."""

    edges: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        if len(self.edges) != len(self.counts) + 1:
            raise ContractError("need exactly one more edge than counts")
        if not (np.diff(self.edges) > 0).all():
            raise ContractError("bin edges must be strictly increasing")

    @classmethod
    def from_values(cls, values, bins: int = 20,
                    lo: float = 0.0, hi: float = 1.0) -> "Histogram":
        edges = np.linspace(lo, hi, bins + 1)
        counts, _ = np.histogram(np.asarray(values, dtype=np.float64), bins=edges)
        return cls(edges, counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def mass(self, lo: float, hi: float) -> float:
        """Fraction of samples in bins whose range lies within [lo, hi]."""
        if self.total == 0:
            return 0.0
        inside = (self.edges[:-1] >= lo - 1e-12) & (self.edges[1:] <= hi + 1e-12)
        return float(self.counts[inside].sum()) / self.total

    def to_csv(self) -> str:
        lines = ["bin_lo,bin_hi,count"]
        for lo, hi, c in zip(self.edges[:-1], self.edges[1:], self.counts):
            lines.append(f"{lo:.6f},{hi:.6f},{int(c)}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class EvalReport:
    """Summary of one evaluation pass over a dataset."""

    accuracy: float
    mean_entropy: float
    uncertain_fraction: float
    histogram: Histogram
    n_mc: int
    tau: float
    n_examples: int

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise ContractError(f"accuracy {self.accuracy} outside [0, 1]")
        if not 0.0 <= self.uncertain_fraction <= 1.0:
            raise ContractError(
                f"uncertain fraction {self.uncertain_fraction} outside [0, 1]")
        if not -1e-12 <= self.mean_entropy <= math.log(2.0) + 1e-12:
            raise ContractError(
                f"mean entropy {self.mean_entropy} outside [0, ln 2]")

    def to_json_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "mean_entropy_nats": self.mean_entropy,
            "uncertain_fraction": self.uncertain_fraction,
            "n_mc": self.n_mc,
            "tau": self.tau,
            "n_examples": self.n_examples,
        }


# --------------------------------------------------------------------------
# Prediction


def _forward_probs(model: Model, x: np.ndarray, mode: str,
                   rng: np.random.Generator | None,
                   chunk: int = 256) -> np.ndarray:
    """Softmax outputs [n, 2] for encoded inputs [n, d, f], one weight draw.

    In sampled mode the weights are drawn once and shared by every chunk,
    so chunking never changes the result.
    """
    n = x.shape[0]
    noise = model.draw_noise(mode, n, rng) if mode == "sampled" else {}
    bound = model.bind(None)
    out = np.empty((n, 2))
    for start in range(0, n, chunk):
        xb = x[start:start + chunk]
        logits = model.logits_from_flat(
            bound, Tensor(_flatten_steps(xb)), xb.shape[0], mode, noise)
        out[start:start + chunk] = _softmax(logits.data)
    return out


def mc_predict(model: Model, x, n_mc: int,
               rng: np.random.Generator | None = None) -> PredictiveDistribution:
    """Average the softmax output over `n_mc` posterior weight draws.

    For one encoded `[d, f]` input.  The deterministic head has a point
    posterior, so every draw is the same mean-mode pass.
    """
    if n_mc < 1:
        raise DomainError(f"n_mc must be >= 1, got {n_mc}")
    x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    if x.ndim != 2:
        raise ContractError(f"expected one [d, f] input, got shape {x.shape}")
    batch = x[None, :, :]
    if not model.spec.is_variational:
        p = _forward_probs(model, batch, "mean", None)[0]
        return PredictiveDistribution.from_draws(np.tile(p, (n_mc, 1)))
    if rng is None:
        raise ContractError("mc_predict on a variational model requires an rng")
    draws = np.empty((n_mc, 2))
    for k in range(n_mc):
        draws[k] = _forward_probs(model, batch, "sampled", rng)[0]
    return PredictiveDistribution.from_draws(draws)


def predict_dataset(model: Model, dataset: Dataset, n_mc: int,
                    rng: np.random.Generator | None = None,
                    mask_rows: tuple[int, int] | None = None
                    ) -> list[PredictiveDistribution]:
    """Monte-Carlo predictions for every example of a dataset.

    Each draw samples one weight vector and runs the whole dataset through
    it, so all examples share the same `n_mc` networks from the ensemble.
    `mask_rows` optionally blacks out a row range of every input first.
    """
    if n_mc < 1:
        raise DomainError(f"n_mc must be >= 1, got {n_mc}")
    if len(dataset) == 0:
        raise DomainError("cannot predict on an empty dataset")
    x = encode_batch(dataset.codes)
    if mask_rows is not None:
        x = mask_batch(x, mask_rows)
    if not model.spec.is_variational:
        probs = _forward_probs(model, x, "mean", None)
        return [PredictiveDistribution.from_draws(np.tile(p, (n_mc, 1)))
                for p in probs]
    if rng is None:
        raise ContractError("variational prediction requires an rng")
    draws = np.empty((n_mc, len(dataset), 2))
    for k in range(n_mc):
        draws[k] = _forward_probs(model, x, "sampled", rng)
    return [PredictiveDistribution.from_draws(draws[:, i, :])
            for i in range(len(dataset))]


def evaluate(model: Model, dataset: Dataset, n_mc: int, tau: float,
             rng: np.random.Generator | None = None,
             mask_rows: tuple[int, int] | None = None) -> EvalReport:
    """Accuracy, mean entropy, uncertain fraction and the p(y=1) histogram."""
    if not 0.0 < tau <= 1.0:
        raise DomainError(f"tau must be in (0, 1], got {tau}")
    dists = predict_dataset(model, dataset, n_mc, rng, mask_rows)
    probs = np.stack([dist.probs for dist in dists])
    predicted = probs.argmax(axis=1)
    accuracy = float((predicted == dataset.labels).mean())
    entropies = predictive_entropy(probs)
    uncertain = float((probs.max(axis=1) <= tau).mean())
    hist = Histogram.from_values(probs[:, 1])
    return EvalReport(accuracy=accuracy,
                      mean_entropy=float(entropies.mean()),
                      uncertain_fraction=uncertain,
                      histogram=hist,
                      n_mc=n_mc, tau=tau, n_examples=len(dataset))


# --------------------------------------------------------------------------
# In-distribution vs. out-of-distribution comparison


@dataclass(frozen=True)
class OodSummary:
    """Shift statistics between an in-distribution and a masked report."""

    mean_entropy_delta: float
    uncertain_fraction_delta: float
    mid_bin_mass_in: float
    mid_bin_mass_masked: float

    def to_json_dict(self) -> dict:
        return {
            "mean_entropy_delta": self.mean_entropy_delta,
            "uncertain_fraction_delta": self.uncertain_fraction_delta,
            "mid_bin_mass_in": self.mid_bin_mass_in,
            "mid_bin_mass_masked": self.mid_bin_mass_masked,
        }


def ood_report(in_dist: EvalReport, masked: EvalReport) -> OodSummary:
    """Entropy/uncertainty deltas plus the [0.4, 0.6] histogram mass of both."""
    if in_dist.n_mc != masked.n_mc or in_dist.tau != masked.tau:
        raise ContractError(
            "reports must share n_mc and tau: "
            f"({in_dist.n_mc}, {in_dist.tau}) vs ({masked.n_mc}, {masked.tau})")
    return OodSummary(
        mean_entropy_delta=masked.mean_entropy - in_dist.mean_entropy,
        uncertain_fraction_delta=(masked.uncertain_fraction
                                  - in_dist.uncertain_fraction),
        mid_bin_mass_in=in_dist.histogram.mass(0.4, 0.6),
        mid_bin_mass_masked=masked.histogram.mass(0.4, 0.6),
    )

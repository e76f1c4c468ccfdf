"""Minibatch training of both model heads.

One epoch shuffles the training examples, walks them in fixed-size batches
(the last batch may be short), and applies one Adam update per batch.  The
Bayesian head minimizes the single-sample Flipout estimate of the negative
ELBO with the KL term weighted by 1/num_batches; the deterministic head
minimizes plain cross-entropy.  Everything is a pure function of the
configured seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import streams, variational as vr
from .errors import DomainError, TrainingError
from .network import Model, ModelSpec
from .optimizer import AdamState, adam_step
from .pileup import Dataset, encode_batch

__all__ = ["TrainConfig", "EpochStats", "train_model"]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 64
    seed: int = 42
    split_fraction: float = 0.8
    prior_sigma: float = 1.0
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise DomainError("epochs and batch_size must be >= 1")
        if not 0.0 < self.split_fraction < 1.0:
            raise DomainError(
                f"split fraction must be in (0, 1), got {self.split_fraction}")


@dataclass(frozen=True)
class EpochStats:
    """Per-epoch means over batches, plus the training accuracy of the
    sampled forward passes used for the updates."""

    epoch: int
    nll: float
    kl: float
    total: float
    train_accuracy: float

    def csv_row(self) -> str:
        return (f"{self.epoch},{self.nll:.10g},{self.kl:.10g},"
                f"{self.total:.10g},{self.train_accuracy:.10g}")


CSV_HEADER = "epoch,nll,kl,total,train_accuracy"


def train_model(train_ds: Dataset, spec: ModelSpec,
                cfg: TrainConfig) -> tuple[Model, list[EpochStats]]:
    """Train a fresh model on `train_ds` and return it with the epoch log."""
    n = len(train_ds)
    if n == 0:
        raise DomainError("cannot train on an empty dataset")
    model = Model.initialize(spec, streams.derive(cfg.seed, streams.INIT))
    rng_order = streams.derive(cfg.seed, streams.BATCH_ORDER)
    rng_noise = streams.derive(cfg.seed, streams.TRAIN_NOISE)
    prior = vr.GaussianPrior(cfg.prior_sigma)
    state = AdamState(learning_rate=cfg.learning_rate, beta1=cfg.beta1,
                      beta2=cfg.beta2, eps=cfg.adam_eps)
    num_batches = math.ceil(n / cfg.batch_size)

    history: list[EpochStats] = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng_order.permutation(n)
        sums = np.zeros(3)
        correct = 0
        for b in range(num_batches):
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            x = encode_batch(train_ds.codes[idx])
            y = train_ds.labels[idx]
            try:
                if spec.is_variational:
                    report, grads, logits = vr.elbo_minibatch(
                        model, (x, y), num_batches, rng_noise, prior=prior,
                        return_grads=True)
                else:
                    report, grads, logits = vr.standard_minibatch(
                        model, (x, y), return_grads=True)
                if not math.isfinite(report.total):
                    raise TrainingError("non-finite loss")
                model.params, state = adam_step(model.params, grads, state)
            except TrainingError as exc:
                raise TrainingError(
                    f"{exc} (epoch {epoch}, batch {b + 1})") from exc
            sums += (report.nll, report.kl, report.total)
            correct += int((logits.argmax(axis=1) == y).sum())
        means = sums / num_batches
        history.append(EpochStats(epoch=epoch, nll=float(means[0]),
                                  kl=float(means[1]), total=float(means[2]),
                                  train_accuracy=correct / n))
    return model, history

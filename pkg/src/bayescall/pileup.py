"""Tumor/normal pair-matrix data: simulation, encoding, and the BVCD format.

An example is a depth-by-2w grid of base codes: columns 1..w hold the
normal sample's reads, columns w+1..2w the tumor's, over the same w
reference loci.  The candidate locus sits at the center column of each
half; label 1 means the tumor carries a somatic variant there.

The simulator stands in for a real validated-call corpus: it draws a
reference base per locus, sprinkles germline heterozygous sites (alt at
50% allele fraction in both halves), plants a somatic alt in the tumor
half only for positives, pads rows beyond the drawn coverage, and corrupts
every covered cell with uniform substitution errors at rate epsilon.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from . import streams
from .autodiff import Tensor
from .errors import BalanceError, ContractError, DomainError, FormatError

__all__ = [
    "BaseCode",
    "CODE_CHANNELS",
    "PairMatrix",
    "LabeledExample",
    "SimulatorConfig",
    "Dataset",
    "simulate_example",
    "simulate_dataset",
    "encode",
    "encode_batch",
    "decode_channels",
    "apply_mask",
    "mask_batch",
    "undersample",
    "split",
    "save_dataset",
    "load_dataset",
    "DATASET_MAGIC",
    "DATASET_VERSION",
]


class BaseCode(IntEnum):
    """Cell values of a pair matrix; PAD means no read covers the cell."""

    PAD = 0
    A = 1
    C = 2
    G = 3
    T = 4
    OTHER = 5


#: Injective 3-channel encoding per base code; PAD is black so a zeroed
#: (masked) row is indistinguishable from uncovered cells.
CODE_CHANNELS = np.array([
    [0.0, 0.0, 0.0],  # PAD
    [1.0, 0.0, 0.0],  # A
    [0.0, 1.0, 0.0],  # C
    [0.0, 0.0, 1.0],  # G
    [1.0, 1.0, 0.0],  # T
    [1.0, 0.0, 1.0],  # OTHER
])


def decode_channels(triple) -> BaseCode:
    """Invert `CODE_CHANNELS`; the mapping is injective by construction."""
    t = np.asarray(triple, dtype=np.float64)
    for code in BaseCode:
        if np.array_equal(CODE_CHANNELS[code], t):
            return code
    raise DomainError(f"channel triple {t.tolist()} is not in the code table")


@dataclass(frozen=True)
class PairMatrix:
    """One d x 2w grid of base codes (normal half | tumor half)."""

    depth: int
    width: int
    codes: np.ndarray

    def __post_init__(self):
        c = self.codes
        if c.shape != (self.depth, 2 * self.width):
            raise ContractError(
                f"codes shape {c.shape} != ({self.depth}, {2 * self.width})")
        if c.dtype != np.uint8 or (c > max(BaseCode)).any():
            raise ContractError("codes must be uint8 values 0..5")

    @property
    def candidate_column(self) -> int:
        """0-based candidate locus inside each half (center column)."""
        return self.width // 2

    def normal_half(self) -> np.ndarray:
        return self.codes[:, :self.width]

    def tumor_half(self) -> np.ndarray:
        return self.codes[:, self.width:]


@dataclass(frozen=True)
class LabeledExample:
    matrix: PairMatrix
    label: int

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ContractError(f"label must be 0 or 1, got {self.label}")


@dataclass(frozen=True)
class SimulatorConfig:
    """Knobs of the synthetic read simulator."""

    depth: int = 100
    width: int = 10
    error_rate: float = 0.01
    het_prob: float = 0.05
    vaf_lo: float = 0.1
    vaf_hi: float = 0.9
    positive_fraction: float = 0.5
    mean_coverage: float = 90.0
    seed: int = 42

    def __post_init__(self):
        if self.depth < 1 or self.width < 1:
            raise DomainError("depth and width must be >= 1")
        if not 0.0 <= self.error_rate < 1.0:
            raise DomainError(f"error_rate must be in [0, 1), got {self.error_rate}")
        for name in ("het_prob", "positive_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise DomainError(f"{name} must be in [0, 1], got {v}")
        if not (0.0 < self.vaf_lo <= self.vaf_hi <= 1.0):
            raise DomainError(
                f"VAF range [{self.vaf_lo}, {self.vaf_hi}] must sit in (0, 1]")
        if not 0.0 < self.mean_coverage <= self.depth:
            raise DomainError(
                f"mean_coverage must be in (0, depth], got {self.mean_coverage}")


@dataclass
class Dataset:
    """A stack of pair matrices with labels, stored as compact code arrays."""

    depth: int
    width: int
    codes: np.ndarray   # [n, depth, 2*width] uint8
    labels: np.ndarray  # [n] uint8

    def __post_init__(self):
        n = len(self.labels)
        if self.codes.shape != (n, self.depth, 2 * self.width):
            raise ContractError(
                f"codes shape {self.codes.shape} inconsistent with "
                f"{n} examples of depth {self.depth}, width {self.width}")

    def __len__(self) -> int:
        return len(self.labels)

    def example(self, i: int) -> LabeledExample:
        return LabeledExample(
            PairMatrix(self.depth, self.width, self.codes[i]),
            int(self.labels[i]))

    def class_counts(self) -> tuple[int, int]:
        """(negatives, positives)."""
        pos = int(self.labels.sum())
        return len(self.labels) - pos, pos

    def subset(self, indices: np.ndarray) -> "Dataset":
        return Dataset(self.depth, self.width,
                       np.ascontiguousarray(self.codes[indices]),
                       np.ascontiguousarray(self.labels[indices]))


# --------------------------------------------------------------------------
# Simulation


def _simulate_codes(cfg: SimulatorConfig, rng: np.random.Generator,
                    label: int) -> np.ndarray:
    """One example's code grid, for a fixed label.

    Draw order (fixed, part of the reproducibility contract): reference
    bases, het mask, het alt offsets, somatic alt offset + VAF (positives
    only), per-half coverage, normal het coin flips, tumor het coin flips,
    somatic coin flips (positives only), per-half error masks + offsets,
    per-half row shuffles.
    """
    d, w = cfg.depth, cfg.width
    center = w // 2

    ref = rng.integers(1, 5, size=w).astype(np.uint8)
    het = rng.random(w) < cfg.het_prob
    het_alt = (((ref - 1) + rng.integers(1, 4, size=w)) % 4 + 1).astype(np.uint8)
    if label:
        som_alt = np.uint8((int(ref[center]) - 1 + int(rng.integers(1, 4))) % 4 + 1)
        vaf = float(rng.uniform(cfg.vaf_lo, cfg.vaf_hi))

    p_cov = cfg.mean_coverage / d
    halves = []
    for is_tumor in (False, True):
        cov = int(rng.binomial(d, p_cov))
        half = np.zeros((d, w), dtype=np.uint8)
        if cov > 0:
            block = np.broadcast_to(ref, (cov, w)).copy()
            het_hits = (rng.random((cov, w)) < 0.5) & het
            block[het_hits] = np.broadcast_to(het_alt, (cov, w))[het_hits]
            if is_tumor and label:
                som_hits = rng.random(cov) < vaf
                block[som_hits, center] = som_alt
            if cfg.error_rate > 0.0:
                err = rng.random((cov, w)) < cfg.error_rate
                if err.any():
                    offs = rng.integers(1, 4, size=int(err.sum()))
                    cur = block[err]
                    block[err] = ((cur - 1 + offs) % 4 + 1).astype(np.uint8)
            half[:cov] = block[rng.permutation(cov)]
        halves.append(half)
    return np.concatenate(halves, axis=1)


def simulate_example(cfg: SimulatorConfig, rng: np.random.Generator,
                     label: int | None = None) -> LabeledExample:
    """Draw one labeled example.

    The label is Bernoulli(positive_fraction) unless forced by the caller
    (the dataset generator assigns labels by exact quota instead).
    """
    if label is None:
        label = int(rng.random() < cfg.positive_fraction)
    codes = _simulate_codes(cfg, rng, label)
    return LabeledExample(PairMatrix(cfg.depth, cfg.width, codes), label)


def simulate_dataset(cfg: SimulatorConfig, n: int) -> Dataset:
    """Simulate `n` examples with an exact positive-class quota.

    `round(n * positive_fraction)` examples are positive (round half up).
    Example `i` draws from the substream (seed, EXAMPLE, i), so generating
    examples in parallel or serially yields identical bytes; a final
    dataset-level shuffle mixes the classes.
    """
    if n < 0:
        raise DomainError(f"n must be >= 0, got {n}")
    n_pos = int(math.floor(n * cfg.positive_fraction + 0.5))
    codes = np.zeros((n, cfg.depth, 2 * cfg.width), dtype=np.uint8)
    labels = np.zeros(n, dtype=np.uint8)
    for i in range(n):
        label = 1 if i < n_pos else 0
        rng = streams.derive(cfg.seed, streams.EXAMPLE, i)
        codes[i] = _simulate_codes(cfg, rng, label)
        labels[i] = label
    order = streams.derive(cfg.seed, streams.DATASET_SHUFFLE).permutation(n)
    return Dataset(cfg.depth, cfg.width, codes[order], labels[order])


# --------------------------------------------------------------------------
# Encoding and masking


def encode_batch(codes: np.ndarray) -> np.ndarray:
    """[..., d, 2w] codes -> [..., d, 2w*3] features in {0, 1}."""
    feats = CODE_CHANNELS[codes]
    return feats.reshape(*codes.shape[:-1], codes.shape[-1] * 3)


def encode(example: PairMatrix | np.ndarray) -> Tensor:
    """Encode one pair matrix as a `[d, 2w*3]` network input.

    Each code maps to its 3-channel triple, then the (2w, 3) block of every
    depth row is flattened row-major, so locus j occupies features
    3j..3j+2.
    """
    codes = example.codes if isinstance(example, PairMatrix) else np.asarray(example)
    if codes.ndim != 2:
        raise ContractError(f"expected a [d, 2w] grid, got shape {codes.shape}")
    return Tensor(encode_batch(codes))


def _check_rows(rows: tuple[int, int], depth: int) -> tuple[int, int]:
    lo, hi = rows
    if not (1 <= lo <= hi <= depth):
        raise DomainError(
            f"mask rows {lo}..{hi} invalid for depth {depth} (1-based, inclusive)")
    return lo, hi


def mask_batch(x: np.ndarray, rows: tuple[int, int]) -> np.ndarray:
    """Zero the given 1-based inclusive row range of `[..., d, f]` inputs."""
    lo, hi = _check_rows(rows, x.shape[-2])
    out = x.copy()
    out[..., lo - 1:hi, :] = 0.0
    return out


def apply_mask(x: Tensor | np.ndarray, rows: tuple[int, int]) -> Tensor:
    """Black out a row range of one encoded `[d, f]` input."""
    x = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ContractError(f"expected a [d, f] input, got shape {x.shape}")
    return Tensor(mask_batch(x, rows))


# --------------------------------------------------------------------------
# Balancing and splitting


def undersample(ds: Dataset, rng: np.random.Generator) -> Dataset:
    """Subsample the majority class to the minority count, then shuffle."""
    neg, pos = ds.class_counts()
    if neg == 0 or pos == 0:
        raise BalanceError(
            f"undersampling needs both classes, got counts ({neg}, {pos})")
    keep = min(neg, pos)
    idx_neg = np.flatnonzero(ds.labels == 0)
    idx_pos = np.flatnonzero(ds.labels == 1)
    if neg > keep:
        idx_neg = rng.choice(idx_neg, size=keep, replace=False)
    if pos > keep:
        idx_pos = rng.choice(idx_pos, size=keep, replace=False)
    chosen = np.concatenate([idx_neg, idx_pos])
    return ds.subset(chosen[rng.permutation(len(chosen))])


def split(ds: Dataset, train_fraction: float,
          rng: np.random.Generator) -> tuple[Dataset, Dataset]:
    """Shuffle then partition; |train| = round(fraction * n), half up."""
    if not 0.0 < train_fraction < 1.0:
        raise DomainError(f"train fraction must be in (0, 1), got {train_fraction}")
    n = len(ds)
    if n == 0:
        raise DomainError("cannot split an empty dataset")
    order = rng.permutation(n)
    n_train = int(math.floor(train_fraction * n + 0.5))
    return ds.subset(order[:n_train]), ds.subset(order[n_train:])


# --------------------------------------------------------------------------
# BVCD on-disk format

DATASET_MAGIC = b"BVCD"
DATASET_VERSION = 1
_HEADER = struct.Struct("<4sIIII")  # magic, version, d, w, count


def save_dataset(ds: Dataset, path) -> None:
    """Write the BVCD format: 20-byte header, then per example one label
    byte followed by d*2w row-major code bytes."""
    with open(path, "wb") as f:
        f.write(_HEADER.pack(DATASET_MAGIC, DATASET_VERSION,
                             ds.depth, ds.width, len(ds)))
        cell_count = ds.depth * 2 * ds.width
        flat = np.empty((len(ds), 1 + cell_count), dtype=np.uint8)
        flat[:, 0] = ds.labels
        flat[:, 1:] = ds.codes.reshape(len(ds), cell_count)
        f.write(flat.tobytes())


def load_dataset(path) -> Dataset:
    """Read a BVCD file, validating structure byte-for-byte."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < _HEADER.size:
        raise FormatError(
            f"file too short for a {_HEADER.size}-byte header", offset=len(blob))
    magic, version, d, w, count = _HEADER.unpack_from(blob, 0)
    if magic != DATASET_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {DATASET_MAGIC!r}",
                          offset=0)
    if version != DATASET_VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    if d < 1 or w < 1:
        raise FormatError(f"invalid dimensions d={d}, w={w}", offset=8)
    record = 1 + d * 2 * w
    expected = _HEADER.size + count * record
    if len(blob) != expected:
        raise FormatError(
            f"expected {expected} bytes for {count} examples, got {len(blob)}",
            offset=min(len(blob), expected))
    body = np.frombuffer(blob, dtype=np.uint8,
                         offset=_HEADER.size).reshape(count, record)
    labels = body[:, 0].copy()
    codes = body[:, 1:].reshape(count, d, 2 * w).copy()
    bad = np.flatnonzero(labels > 1)
    if bad.size:
        raise FormatError(f"label byte out of range",
                          offset=_HEADER.size + int(bad[0]) * record)
    if (codes > max(BaseCode)).any():
        i = int(np.argwhere(codes > max(BaseCode))[0][0])
        raise FormatError("code byte out of range",
                          offset=_HEADER.size + i * record + 1)
    return Dataset(d, w, codes, labels)

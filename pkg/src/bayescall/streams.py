"""Deterministic derivation of named RNG substreams from one seed.

Every random decision in the toolchain pulls from a generator created by
`derive(seed, TAG, ...)`, so a whole simulate/train/evaluate run is a pure
function of its configured seeds.  Example generation uses one substream
per example index, which makes parallel and serial dataset generation
bit-identical.
"""

from __future__ import annotations

import numpy as np

# Stream tags; values are part of the reproducibility contract.
EXAMPLE = 1           # (sim seed, EXAMPLE, index) -> one simulated example
DATASET_SHUFFLE = 2   # final example-order shuffle of a simulated dataset
UNDERSAMPLE = 3       # majority-class subsampling and reshuffle
INIT = 4              # parameter initialization
BATCH_ORDER = 5       # per-epoch training batch shuffles
TRAIN_NOISE = 6       # variational sampling during training
SPLIT = 7             # train/test partition
EVAL_DRAWS = 8        # Monte-Carlo weight draws at evaluation


def derive(seed: int, tag: int, *extra: int) -> np.random.Generator:
    """A PCG64 generator keyed by (seed, tag, *extra)."""
    return np.random.default_rng([int(seed), int(tag), *map(int, extra)])

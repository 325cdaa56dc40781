"""Seeded random streams.

Every random draw in a run comes from one of a few independent streams so that
changing one consumer (for instance Langevin noise) never shifts another (the
data noise of the rollouts).  Rollout noise is keyed per sample, which makes a
batch reproducible from its coordinates alone and lets any subset of samples be
regenerated without replaying the others.
"""

from __future__ import annotations

import numpy as np

# Stream tags mixed into the seed sequence of per-sample generators.
TRAIN = 0
EVAL = 1
CHECK = 2
TRAJECTORY = 3


def sample_generator(seed: int, *key: int) -> np.random.Generator:
    """Return a counter-based generator keyed by ``(seed, *key)``."""
    entropy = [int(seed), *(int(k) for k in key)]
    if any(e < 0 for e in entropy):
        raise ValueError(f"Seeds and stream keys must be non-negative, got {entropy}")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def sequential_generator(seed: int) -> np.random.Generator:
    """Plain sequential generator, used for initialization and Langevin noise."""
    return np.random.default_rng(int(seed))

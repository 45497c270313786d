"""Seeded random streams.

All randomness in the package flows through numpy PCG64 generators created
here. Reproducibility contract: the same seed yields the same stream within
this implementation; no cross-library bit compatibility is promised.
"""

import numpy as np

# Stream ids used to derive independent child generators from one run seed.
INIT_STREAM = 0    # parameter initialization
STEP_STREAM = 1    # one child per training step (masking, noise, dropout)
EVAL_STREAM = 2    # inference passes
SAMPLE_STREAM = 3  # one-shot sample generation (e.g. fixed inpainting corruption)


def make_rng(seed: int) -> np.random.Generator:
    """Root generator for a seed."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def child_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for (seed, key).

    Keys address disjoint streams (e.g. per training step), so a run can be
    resumed mid-stream by re-deriving the same children.
    """
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(key))
    return np.random.Generator(np.random.PCG64(ss))

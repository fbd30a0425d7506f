"""Seeded random streams. Every stochastic entry point takes an explicit seed."""

from typing import Union

import numpy as np

SeedLike = Union[None, int, np.random.SeedSequence]


def make_rng(seed: SeedLike = None) -> np.random.Generator:
    """Return a PCG64 generator for ``seed``."""
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))

"""Counter-based random streams with named, reproducible derivation.

All randomness in the package flows through Philox generators keyed by
``numpy.random.SeedSequence``. Substreams are derived by spawning children
from a parent sequence, so every component (covariates, treatments, noise,
weight init, shuffling, pair sampling) owns an independent stream that is a
pure function of the top-level integer seed.
"""

from __future__ import annotations

import numpy as np

SeedLike = int | np.random.SeedSequence


def seed_sequence(seed: SeedLike) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(int(seed))


def make_rng(seed: SeedLike) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed_sequence(seed)))


def spawn(seed: SeedLike, n: int) -> list[np.random.SeedSequence]:
    return seed_sequence(seed).spawn(n)


def derive_seed(*path: int) -> int:
    """Deterministic integer seed from a tuple of integers (e.g. seed, n, tag)."""
    return int(np.random.SeedSequence([int(p) for p in path]).generate_state(1, np.uint32)[0])

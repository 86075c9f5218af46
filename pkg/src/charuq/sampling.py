"""Small sampling helpers shared by the screening, surrogate and BMA stages."""

from __future__ import annotations

import numpy as np


def lhs_unit(n: int, p: int, rng: np.random.Generator) -> np.ndarray:
    """Latin hypercube sample of shape (n, p) on the open unit cube.

    One stratum per sample and dimension; strata are jittered uniformly, so
    no coordinate ever lands exactly on 0 or 1.
    """
    if n < 1 or p < 1:
        raise ValueError(f"need n >= 1 and p >= 1, got n={n}, p={p}")
    u = np.empty((n, p))
    for j in range(p):
        u[:, j] = (rng.permutation(n) + rng.uniform(size=n)) / n
    return u


def spawn_rngs(seed: int, n: int) -> list[np.random.Generator]:
    """Independent per-index generators, stable under execution order."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]

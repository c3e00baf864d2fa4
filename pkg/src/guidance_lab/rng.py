"""Deterministic random streams keyed by (seed, chain, iteration).

Every stochastic draw in the samplers comes from a stream derived here, so
results are reproducible bit-for-bit and independent of how chains are
scheduled across threads.
"""

from __future__ import annotations

import numpy as np

__all__ = ["chain_rng"]


def chain_rng(seed: int, chain: int, iteration: int) -> np.random.Generator:
    """Generator for one (chain, iteration) cell of a seeded experiment."""
    ss = np.random.SeedSequence(seed, spawn_key=(chain, iteration))
    return np.random.default_rng(ss)

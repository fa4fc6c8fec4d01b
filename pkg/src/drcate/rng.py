"""Deterministic random-variate streams for the Monte Carlo engine.

Philox (counter-based, 64-bit keys) so replication r of a run seeded with s
always sees the same stream regardless of execution order or parallelism:
the substream key is s XOR r.  Normals come from the inverse CDF applied to
uniforms, keeping every draw a pure function of the counter sequence.
"""

from __future__ import annotations

import numpy as np
from numpy.random import Generator, Philox
from scipy.special import ndtri

__all__ = ["substream", "uniforms", "normals", "MAX_SEED"]

MAX_SEED = 2**64 - 1

# smallest uniform fed to the inverse CDF; rng.random() can return 0.0 exactly
_U_FLOOR = 2.0**-54


def substream(seed: int, r: int = 0) -> Generator:
    """Generator for replication `r` of a run seeded with `seed`."""
    if not (0 <= seed <= MAX_SEED):
        raise ValueError(f"seed must fit in 64 bits, got {seed}")
    if r < 0:
        raise ValueError("replication index must be nonnegative")
    return Generator(Philox(key=(seed ^ r) & MAX_SEED))


def uniforms(gen: Generator, size, low: float = 0.0, high: float = 1.0) -> np.ndarray:
    """Uniform draws on [low, high)."""
    if high <= low:
        raise ValueError("need high > low")
    return low + (high - low) * gen.random(size)


def normals(gen: Generator, size, scale: float = 1.0) -> np.ndarray:
    """Normal draws via the inverse CDF of uniforms."""
    if scale < 0:
        raise ValueError("scale must be nonnegative")
    u = gen.random(size)
    u = np.maximum(u, _U_FLOOR)
    return scale * ndtri(u)

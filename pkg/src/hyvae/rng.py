"""Seedable deterministic random number generation.

All stochastic behaviour in the library (parameter initialization,
reparameterized sampling, mini-batch shuffling) draws from :class:`Rng`,
a thin wrapper around NumPy's PCG64 bit generator.  PCG64 is a published,
fixed algorithm, so a given seed yields the same draw sequence bit-for-bit
on every platform.
"""

import numpy as np


class Rng:
    """Deterministic pseudo-random generator (PCG64)."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def normal(self, shape) -> np.ndarray:
        """Standard normal draws of the given shape, float64."""
        return self._gen.standard_normal(size=shape, dtype=np.float64)

    def uniform(self, low: float, high: float, shape) -> np.ndarray:
        """Uniform draws on [low, high)."""
        return self._gen.uniform(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        """A random permutation of range(n)."""
        return self._gen.permutation(n)

    def integers(self, low: int, high: int) -> int:
        """A single integer drawn uniformly from [low, high)."""
        return int(self._gen.integers(low, high))

"""Deterministic random number generation.

Every stochastic routine in this package receives an explicit ``Rng``.
The underlying generator is numpy's PCG64 seeded through a SeedSequence,
so the same seed yields the same draw sequence on every platform, and
``split`` hands out statistically independent child generators for
subsystems that must not share a stream.
"""

import numpy as np


class Rng:
    """Seeded, splittable random source backed by numpy PCG64."""

    def __init__(self, seed, _sequence=None):
        self.sequence = _sequence if _sequence is not None else np.random.SeedSequence(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.sequence))

    def split(self, n):
        """Return n independent child generators."""
        return [Rng(None, _sequence=child) for child in self.sequence.spawn(n)]

    def uniform(self, low, high, shape=None, dtype=np.float32):
        out = self._gen.uniform(low, high, size=shape)
        return dtype(out) if shape is None else out.astype(dtype)

    def normal(self, mean, std, shape=None, dtype=np.float32):
        out = self._gen.normal(mean, std, size=shape)
        return dtype(out) if shape is None else out.astype(dtype)

    def integer(self, low, high):
        """One integer drawn uniformly from [low, high)."""
        return int(self._gen.integers(low, high))

    def shuffled_indices(self, n):
        """Fisher-Yates permutation of range(n), driven by this generator."""
        idx = np.arange(n)
        for i in range(n - 1, 0, -1):
            j = self.integer(0, i + 1)
            idx[i], idx[j] = idx[j], idx[i]
        return idx

    def glorot_uniform(self, fan_in, fan_out, shape):
        """Fan-scaled uniform init for weight tensors."""
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return self.uniform(-limit, limit, shape)

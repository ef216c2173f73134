"""Deterministic random streams.

Every random draw in the library goes through :class:`Rng`, a thin wrapper
over numpy's PCG64 bit generator. The same seed produces the same stream on
every platform and every run. ``child(*keys)`` derives an independent
substream from integer keys, so e.g. the student and teacher perturbations
of a training step come from separate streams and consuming one never
shifts the other.
"""

import numpy as np

ALGORITHM = "pcg64"


class Rng:
    def __init__(self, seed):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed)))

    def child(self, *keys):
        """Independent substream for (seed, *keys); deterministic in its keys."""
        rng = Rng.__new__(Rng)
        rng.seed = self.seed
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=tuple(int(k) for k in keys))
        rng._gen = np.random.Generator(np.random.PCG64(seq))
        return rng

    # pass-throughs for the draws the library uses
    def random(self, size=None, dtype=np.float64):
        return self._gen.random(size, dtype=dtype)

    def standard_normal(self, size=None, dtype=np.float64):
        return self._gen.standard_normal(size, dtype=dtype)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, x):
        return self._gen.permutation(x)

    def choice(self, a, size=None, replace=True):
        return self._gen.choice(a, size=size, replace=replace)

    def __repr__(self):
        return f"Rng(seed={self.seed}, algorithm={ALGORITHM!r})"

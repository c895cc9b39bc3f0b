"""Counter-based random number generation.

All randomness in the project flows through :class:`Rng`, a thin wrapper
around numpy's Philox bit generator. Philox is counter-based, so streams
derived from (seed, tag...) keys are independent by construction and a
given seed reproduces the same draw sequence bit-for-bit on any platform.
"""

from __future__ import annotations

import numpy as np

# Philox accepts a 256-bit key: the run seed plus up to three stream tags.
_KEY_WIDTH = 4


class Rng:
    """Deterministic random stream keyed by a 64-bit seed plus stream tags."""

    def __init__(self, seed: int, *tags: int):
        if len(tags) > _KEY_WIDTH - 1:
            raise ValueError(f"at most {_KEY_WIDTH - 1} stream tags, got {len(tags)}")
        # 128-bit key carries the seed; stream tags go into the high words of
        # the 256-bit counter, leaving the low word free for draw counting.
        key = np.array([seed & 0xFFFFFFFFFFFFFFFF, 0], dtype=np.uint64)
        counter = np.zeros(4, dtype=np.uint64)
        for i, t in enumerate(tags):
            counter[i + 1] = np.uint64(t & 0xFFFFFFFFFFFFFFFF)
        self.seed = seed
        self.tags = tags
        self._gen = np.random.Generator(np.random.Philox(key=key, counter=counter))

    def spawn(self, *tags: int) -> "Rng":
        """Independent substream for (seed, *self.tags, *tags)."""
        return Rng(self.seed, *self.tags, *tags)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

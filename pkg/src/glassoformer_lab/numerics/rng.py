"""Seeded random streams.

Backed by numpy's PCG64, whose output for a given seed is fixed across
platforms and numpy versions that keep the ``Generator`` contract.
"""
from __future__ import annotations

import numpy as np


class Rng:
    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def child(self, *key: int) -> "Rng":
        """Independent stream derived from ``(seed, *key)``; does not advance self."""
        ss = np.random.SeedSequence([self.seed, *[int(k) for k in key]])
        r = Rng.__new__(Rng)
        r.seed = int(ss.generate_state(1, np.uint64)[0])
        r._gen = np.random.Generator(np.random.PCG64(r.seed))
        return r

    def normal(self, size=None, scale: float = 1.0) -> np.ndarray:
        return self._gen.normal(0.0, scale, size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def get_state(self) -> dict:
        return {"seed": self.seed, "bit_generator": self._gen.bit_generator.state}

    def set_state(self, state: dict) -> None:
        self.seed = int(state["seed"])
        self._gen.bit_generator.state = state["bit_generator"]

"""Portable seeded PRNG used for every random draw in the package.

The generator is xorshift64* seeded through one round of splitmix64, with a
Box-Muller transform for gaussians. Everything is integer arithmetic modulo
2**64 followed by IEEE double conversion, so any language can reproduce the
stream bit-for-bit (up to the libm used for ``log``/``cos``/``sin``).

    state0   = splitmix64(seed)           (replaced by a fixed constant if 0)
    next()   : x ^= x >> 12; x ^= x << 25; x ^= x >> 27; return x * 0x2545F4914F6CDD1D
    uniform  = (next() >> 11) * 2**-53                      in [0, 1)
    gaussian : u1 = ((next() >> 11) + 1) * 2**-53           in (0, 1]
               u2 = (next() >> 11) * 2**-53
               z0 = sqrt(-2 ln u1) cos(2 pi u2), z1 = sqrt(-2 ln u1) sin(2 pi u2)
               z0 is returned first, z1 on the following call.
"""

from __future__ import annotations

import math

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_INV53 = 1.0 / (1 << 53)


def splitmix64(x: int) -> int:
    z = (x + GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, index: int) -> int:
    """Sub-seed for stream ``index`` (class tokens, folds, ...)."""
    return splitmix64((seed + GOLDEN * (index + 1)) & MASK64)


class Rng:
    def __init__(self, seed: int):
        self.seed = int(seed) & MASK64
        state = splitmix64(self.seed)
        self._state = state if state else GOLDEN
        self._spare: float | None = None

    def next_u64(self) -> int:
        x = self._state
        x ^= x >> 12
        x ^= (x << 25) & MASK64
        x ^= x >> 27
        self._state = x
        return (x * 0x2545F4914F6CDD1D) & MASK64

    def uniform(self) -> float:
        return (self.next_u64() >> 11) * _INV53

    def randbelow(self, n: int) -> int:
        """Integer in [0, n). Modulo reduction; bias is < 2**-40 for small n."""
        if n <= 0:
            raise ValueError("n must be positive")
        return self.next_u64() % n

    def gauss(self) -> float:
        if self._spare is not None:
            z, self._spare = self._spare, None
            return z
        u1 = ((self.next_u64() >> 11) + 1) * _INV53
        u2 = (self.next_u64() >> 11) * _INV53
        r = math.sqrt(-2.0 * math.log(u1))
        theta = 2.0 * math.pi * u2
        self._spare = r * math.sin(theta)
        return r * math.cos(theta)

    def normal(self, shape, std: float = 1.0) -> np.ndarray:
        n = int(np.prod(shape)) if shape else 1
        out = np.fromiter((self.gauss() for _ in range(n)), dtype=np.float64, count=n)
        return (out * std).reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of range(n), swapping from the top down."""
        idx = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.randbelow(i + 1)
            idx[i], idx[j] = idx[j], idx[i]
        return np.asarray(idx, dtype=np.int64)

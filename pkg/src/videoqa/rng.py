"""Deterministic PRNG used everywhere randomness matters.

xoshiro256** seeded through splitmix64, so runs reproduce bit-for-bit
across platforms and Python builds. uniform/normal/shuffle are all built
on the raw 64-bit stream; nothing here touches numpy's global RNG.
"""

from __future__ import annotations

import math

import numpy as np

_MASK = (1 << 64) - 1


def _rotl(x, k):
    return ((x << k) | (x >> (64 - k))) & _MASK


class Rng:
    """xoshiro256** stream with float/shape helpers."""

    def __init__(self, seed: int):
        s = seed & _MASK
        state = []
        for _ in range(4):
            # splitmix64 expansion of the seed into the 256-bit state
            s = (s + 0x9E3779B97F4A7C15) & _MASK
            z = s
            z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
            z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
            state.append(z ^ (z >> 31))
        if not any(state):
            state[0] = 1
        self._s = state
        self._spare_gauss = None

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & _MASK, 7) * 9) & _MASK
        t = (s1 << 17) & _MASK
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def random(self) -> float:
        """Uniform float64 in [0, 1)."""
        return (self.next_u64() >> 11) * 2.0**-53

    def uniform(self, lo, hi, shape=None):
        if shape is None:
            return lo + (hi - lo) * self.random()
        out = np.empty(shape, dtype=np.float64)
        flat = out.reshape(-1)
        for i in range(flat.size):
            flat[i] = lo + (hi - lo) * self.random()
        return out

    def normal(self, mu=0.0, sigma=1.0, shape=None):
        if shape is None:
            return mu + sigma * self._gauss()
        out = np.empty(shape, dtype=np.float64)
        flat = out.reshape(-1)
        for i in range(flat.size):
            flat[i] = mu + sigma * self._gauss()
        return out

    def _gauss(self):
        if self._spare_gauss is not None:
            g = self._spare_gauss
            self._spare_gauss = None
            return g
        # Box-Muller; u clamped away from 0 so log stays finite
        u = max(self.random(), 2.0**-53)
        v = self.random()
        r = math.sqrt(-2.0 * math.log(u))
        self._spare_gauss = r * math.sin(2.0 * math.pi * v)
        return r * math.cos(2.0 * math.pi * v)

    def randint(self, n: int) -> int:
        """Uniform int in [0, n) without modulo bias."""
        if n <= 0:
            raise ValueError("randint needs n >= 1")
        limit = (2**64 // n) * n
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def shuffle(self, seq) -> None:
        for i in range(len(seq) - 1, 0, -1):
            j = self.randint(i + 1)
            seq[i], seq[j] = seq[j], seq[i]

    def choice(self, seq):
        return seq[self.randint(len(seq))]

    def sample(self, seq, k):
        """k distinct elements, order random."""
        pool = list(seq)
        self.shuffle(pool)
        return pool[:k]

    def spawn(self) -> "Rng":
        return Rng(self.next_u64())

"""Portable counter-based PRNG.

Output ``i`` (0-based) of a stream with seed ``s`` is ``mix(s + (i + 1) * GAMMA)``
where ``mix`` is the SplitMix64 finalizer::

    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    z =  z ^ (z >> 31)

with ``GAMMA = 0x9E3779B97F4A7C15`` and all arithmetic mod 2**64. This is the
sequence produced by the reference ``splitmix64`` generator, so any platform
can reproduce it bit-for-bit.
"""
from __future__ import annotations

import numpy as np

GAMMA = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB
MASK64 = (1 << 64) - 1


def splitmix64(z: int) -> int:
    """Scalar finalizer, pure-Python reference for the vectorized path."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * MIX1) & MASK64
    z = ((z ^ (z >> 27)) * MIX2) & MASK64
    return z ^ (z >> 31)


def _mix_array(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * np.uint64(MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(MIX2)
        return z ^ (z >> np.uint64(31))


def fnv1a64(text: str) -> int:
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * 0x100000001B3) & MASK64
    return h


def derive_seed(seed: int, name: str) -> int:
    """Sub-seed for a named stage: ``splitmix64(seed ^ fnv1a64(name))``."""
    return splitmix64((seed & MASK64) ^ fnv1a64(name))


class Rng:
    """Counter-based stream. Draws advance the counter; nothing else is stateful."""

    def __init__(self, seed: int):
        self.seed = int(seed) & MASK64
        self.counter = 0

    def spawn(self, name: str) -> "Rng":
        return Rng(derive_seed(self.seed, name))

    def u64(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + 1 + n, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            z = np.uint64(self.seed) + idx * np.uint64(GAMMA)
        return _mix_array(z)

    def uniform(self, n: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        """Float64 in [low, high) with 53 random bits."""
        u = (self.u64(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
        return low + (high - low) * u

    def normal(self, n: int) -> np.ndarray:
        # Box-Muller on 1-u so the log argument is never 0
        m = (n + 1) // 2
        u1 = 1.0 - self.uniform(m)
        u2 = self.uniform(m)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])
        return z[:n]

    def integers(self, n: int, low: int, high: int) -> np.ndarray:
        """Integers in [low, high] inclusive."""
        span = high - low + 1
        return low + np.floor(self.uniform(n) * span).astype(np.int64)

    def permutation(self, n: int) -> np.ndarray:
        keys = self.u64(n)
        return np.argsort(keys, kind="stable")

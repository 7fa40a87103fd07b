"""SplitMix64 streams.

Every random choice in the toolkit comes from one of these, so a release seed
pins down masks, stamps, augmentations and training runs bit for bit.  The
state after n steps is ``seed + n * GOLDEN`` (mod 2**64), which lets whole
blocks of draws be produced with numpy instead of a Python loop.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import ParameterError

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_TWO53 = float(1 << 53)


def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def parse_seed(text) -> int:
    """Accept a decimal or 0x-prefixed hex seed; negative values wrap to 64 bits."""
    if isinstance(text, int):
        return text & MASK64
    s = str(text).strip().lower()
    value = int(s, 16) if s.startswith(("0x", "-0x")) else int(s, 10)
    return value & MASK64


class Prng:
    __slots__ = ("state",)

    def __init__(self, seed: int = 0):
        self.state = int(seed) & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN) & MASK64
        return mix64(self.state)

    def u64s(self, n: int) -> np.ndarray:
        """Next ``n`` raw outputs as a uint64 array; same values as n next_u64 calls."""
        if n <= 0:
            return np.zeros(0, dtype=np.uint64)
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            states = np.uint64(self.state) + steps * np.uint64(GOLDEN)
            out = _mix64_array(states)
        self.state = (self.state + n * GOLDEN) & MASK64
        return out

    def next_unit(self) -> float:
        return (self.next_u64() >> 11) / _TWO53

    def units(self, n: int) -> np.ndarray:
        return (self.u64s(n) >> np.uint64(11)).astype(np.float64) / _TWO53

    def next_gaussian(self, mu: float = 0.0, sigma: float = 1.0) -> float:
        return float(self.gaussians(1, mu, sigma)[0])

    def gaussians(self, n: int, mu: float = 0.0, sigma: float = 1.0) -> np.ndarray:
        """Box-Muller, cosine branch only: each value consumes exactly two draws (u1, u2)."""
        if sigma < 0:
            raise ParameterError(f"sigma must be >= 0, got {sigma}")
        u = self.units(2 * n).reshape(n, 2)
        u1 = 1.0 - u[:, 0]  # (0, 1], keeps log finite
        u2 = u[:, 1]
        z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * math.pi * u2)
        return mu + sigma * z

    def integers(self, n: int, upper: int) -> np.ndarray:
        """``floor(unit * upper)`` for n draws, values in [0, upper)."""
        return np.floor(self.units(n) * upper).astype(np.int64)

    def below(self, upper: int) -> int:
        return int(self.next_unit() * upper)


def new(seed: int) -> Prng:
    return Prng(seed)


def child(seed: int, tag: int) -> Prng:
    """Independent stream for ``tag`` under ``seed``; unaffected by any other stream's use."""
    key = (int(seed) ^ (((int(tag) + 1) * GOLDEN) & MASK64)) & MASK64
    return Prng(mix64(key))

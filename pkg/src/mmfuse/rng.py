"""Deterministic randomness shared by every stochastic step in the package.

Each consumer opens a named substream of one master seed (weight init,
per-epoch shuffles, per-step dropout masks, synthetic data), so identical
(seed, label) pairs replay the identical value stream. The generator is
splitmix64 with a counter-based state, which makes the raw 64-bit stream
identical on every platform and cheap to produce in bulk with numpy.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def _mix(z: int) -> int:
    # splitmix64 finalizer on python ints
    z &= _MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


def _label_hash(label: str) -> int:
    # FNV-1a over the UTF-8 bytes of the substream label
    h = _FNV_OFFSET
    for byte in label.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return h


class SeededRng:
    """splitmix64 substream keyed by (master_seed, label).

    Scalar and vectorized draws consume the same underlying counter, so a
    sequence of calls yields the same stream regardless of how it is
    chunked.
    """

    def __init__(self, master_seed: int, label: str):
        self.master_seed = master_seed & _MASK64
        self.label = label
        self._base = _mix(self.master_seed ^ _mix(_label_hash(label)))
        self._count = 0

    def next_u64(self) -> int:
        self._count += 1
        return _mix((self._base + self._count * _GOLDEN) & _MASK64)

    def next_u64_array(self, n: int) -> np.ndarray:
        idx = np.arange(self._count + 1, self._count + n + 1, dtype=np.uint64)
        self._count += n
        z = np.uint64(self._base) + idx * np.uint64(_GOLDEN)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        return z ^ (z >> np.uint64(31))

    def uniform(self) -> float:
        """One float64 uniform in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * 2.0**-53

    def uniform_array(self, n: int) -> np.ndarray:
        return (self.next_u64_array(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def normal_array(self, n: int) -> np.ndarray:
        """Standard normals via Box-Muller on consecutive uniform pairs."""
        pairs = (n + 1) // 2
        u1 = (self.next_u64_array(pairs) >> np.uint64(11)).astype(np.float64)
        u2 = (self.next_u64_array(pairs) >> np.uint64(11)).astype(np.float64)
        u1 = (u1 + 1.0) * 2.0**-53  # (0, 1] keeps the log finite
        u2 = u2 * 2.0**-53
        radius = np.sqrt(-2.0 * np.log(u1))
        theta = (2.0 * np.pi) * u2
        return np.concatenate([radius * np.cos(theta), radius * np.sin(theta)])[:n]

    def below(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        return self.next_u64() % n

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]

"""Seeded pseudo-random generator with independent substreams.

The experiment harness needs bit-identical shape sequences on every platform,
so this is a fixed splitmix64 generator (64-bit add/shift/multiply) rather
than anything library- or OS-dependent. Substream i of a seed is an
independent generator seeded with mix64(seed ^ mix64(i)); campaign iteration
i always owns substream i, which is what makes trials order-independent.
"""

from __future__ import annotations

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def mix64(z: int) -> int:
    """splitmix64 finalizer: avalanche a 64-bit value."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


class SeededRng:
    """splitmix64 stream; (seed, stream) fully determines the output sequence."""

    def __init__(self, seed: int, stream: int = 0):
        self.seed = seed & _MASK
        self.stream = stream & _MASK
        self._state = mix64(self.seed ^ mix64(self.stream))

    def substream(self, index: int) -> "SeededRng":
        """Independent generator for substream `index` of the same seed."""
        return SeededRng(self.seed, index)

    def next_u64(self) -> int:
        self._state = (self._state + _GOLDEN) & _MASK
        return mix64(self._state)

    def random(self) -> float:
        """Uniform float64 in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * (2.0 ** -53)

    def uniform(self, lo: float, hi: float) -> float:
        """Uniform in [lo, hi); collapses to lo when the range is empty."""
        return lo + (hi - lo) * self.random()

    def below(self, n: int) -> int:
        """Uniform integer in [0, n) via the multiply-shift reduction."""
        if n <= 0:
            raise ValueError("n must be positive")
        return (self.next_u64() * n) >> 64

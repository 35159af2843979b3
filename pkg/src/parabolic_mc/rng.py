"""Counter-based random streams.

A stream is a Philox generator keyed by ``(master_seed, stream_index)``.
Sub-blocks (one per chunk of paths) live in disjoint regions of the
256-bit counter space, so chunk ``k`` draws the same numbers no matter
which worker runs it or in what order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngStream:
    master_seed: int
    stream_index: int = 0
    block: int = 0

    def __post_init__(self):
        for name in ("master_seed", "stream_index", "block"):
            v = getattr(self, name)
            if int(v) != v or v < 0 or v > _MASK64:
                raise ValueError(f"{name} must be an unsigned 64-bit integer, got {v}")

    def generator(self) -> np.random.Generator:
        counter = np.array([0, 0, 0, self.block], dtype=np.uint64)
        key = np.array([self.master_seed, self.stream_index], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key, counter=counter))

    def chunk(self, k: int) -> "RngStream":
        """Independent block ``k`` of this stream."""
        return RngStream(self.master_seed, self.stream_index, int(k))

    def substream(self, j: int) -> "RngStream":
        """A different stream derived from this one (for a separate purpose)."""
        mixed = (self.stream_index * 0x9E3779B97F4A7C15 + int(j) + 1) & _MASK64
        return RngStream(self.master_seed, mixed, 0)

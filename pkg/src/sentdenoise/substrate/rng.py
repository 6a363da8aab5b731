"""Counter-based random streams.

Every random draw in the package comes from an :class:`RngStream`.  A stream
is a Philox generator keyed on ``(seed, stream_id)``; sub-streams are derived
by hashing a tag path into a new ``stream_id``, so a dropout mask for a given
``(step, layer, example)`` can be regenerated without having been stored.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _derive_id(parent: int, tags: tuple) -> int:
    h = hashlib.blake2b(digest_size=8)
    h.update(parent.to_bytes(8, "little"))
    for tag in tags:
        h.update(b"\x1f")
        h.update(repr(tag).encode("utf-8"))
    return int.from_bytes(h.digest(), "little")


class RngStream:
    """A reproducible random stream identified by ``(seed, stream_id)``."""

    def __init__(self, seed: int, stream_id: int = 0, counter: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        self._start = counter
        self._bitgen = None
        self._gen = None

    def _generator(self) -> np.random.Generator:
        # built on first draw; path-only streams never pay for it
        if self._gen is None:
            self._bitgen = np.random.Philox(key=(self.stream_id << 64) | self.seed, counter=self._start)
            self._gen = np.random.Generator(self._bitgen)
        return self._gen

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id:#x}, counter={self.counter})"

    @property
    def counter(self) -> int:
        if self._bitgen is None:
            return self._start
        words = self._bitgen.state["state"]["counter"]
        return sum(int(w) << (64 * i) for i, w in enumerate(words))

    def child(self, *tags) -> "RngStream":
        """Independent sub-stream named by ``tags`` (any reprable values)."""
        return RngStream(self.seed, _derive_id(self.stream_id, tags))

    def uniform(self, size=None) -> np.ndarray:
        return self._generator().random(size)

    def normal(self, size=None, scale: float = 1.0) -> np.ndarray:
        return self._generator().normal(0.0, scale, size)

    def integers(self, low: int, high: int | None = None, size=None):
        return self._generator().integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._generator().permutation(n)

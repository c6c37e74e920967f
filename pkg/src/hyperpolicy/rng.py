"""Named random streams backed by a counter-based (Philox) generator.

Every stochastic site asks the pool for a stream by name, so a run is a pure
function of (seed, call order within each stream) and is replayable even when
unrelated sampling sites are added or removed.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["RngPool"]


def _stream_key(name: str) -> tuple[int, ...]:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return tuple(int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4))


class RngPool:
    def __init__(self, seed: int):
        self.seed = int(seed)
        self._streams: dict[str, np.random.Generator] = {}

    def stream(self, name: str) -> np.random.Generator:
        """Return the (stateful, cached) generator for `name`."""
        gen = self._streams.get(name)
        if gen is None:
            seq = np.random.SeedSequence(entropy=self.seed, spawn_key=_stream_key(name))
            gen = np.random.Generator(np.random.Philox(seq))
            self._streams[name] = gen
        return gen

    def fresh(self, name: str) -> np.random.Generator:
        """A brand-new generator for `name`, independent of cached state."""
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=_stream_key(name))
        return np.random.Generator(np.random.Philox(seq))

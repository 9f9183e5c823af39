"""Named, counter-based random streams.

Every subsystem of a run draws from its own Philox stream keyed by
``(seed, name)``, so the order in which modules consume randomness never
changes what any other module sees.
"""

from __future__ import annotations

import zlib

import numpy as np


def _name_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def stream(seed: int, name: str) -> np.random.Generator:
    """Return the generator for subsystem ``name`` of the run seeded ``seed``."""
    if seed is None:
        raise ValueError("a seed is mandatory; wall-clock entropy is not used")
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, _name_key(name)])
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(master_seed: int, index: int) -> int:
    """Independent child seed for sweep point ``index``."""
    ss = np.random.SeedSequence([int(master_seed), int(index)])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


class Streams:
    """Lazily created named streams for one run."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._cache: dict[str, np.random.Generator] = {}

    def __getitem__(self, name: str) -> np.random.Generator:
        if name not in self._cache:
            self._cache[name] = stream(self.seed, name)
        return self._cache[name]

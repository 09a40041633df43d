"""Hierarchical seed derivation: master seed -> module -> trial -> stream.

Every key in the path is mapped to an integer (strings through CRC32) and
appended to the spawn key of a `numpy.random.SeedSequence`, so draws depend
only on the master seed and the path, never on call order.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError("seed path integers must be nonnegative")
        return int(part)
    return zlib.crc32(str(part).encode())


def seed_sequence(master: int, *path) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(master), spawn_key=tuple(_key(p) for p in path))


def rng_for(master: int, *path) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(master, *path))


def int_seed(master: int, *path) -> int:
    """A 63-bit integer seed for components that take plain integers."""
    return int(seed_sequence(master, *path).generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))

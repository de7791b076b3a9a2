"""Named random sub-streams derived from one root seed.

Every consumer of randomness asks for a stream by name (``"terrain"``,
``"vegetation"``, ``("episode", 3, 17)`` ...).  Streams are independent of
each other, so adding draws in one subsystem never perturbs another.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    return zlib.crc32(str(part).encode("utf-8"))


def stream(seed: int, *names) -> np.random.Generator:
    """Return a generator for the sub-stream ``names`` of root ``seed``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key(n) for n in names))
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(seed: int, *names) -> int:
    """Integer seed for the sub-stream ``names``, for APIs that take an int."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key(n) for n in names))
    return int(ss.generate_state(1, dtype=np.uint32)[0])

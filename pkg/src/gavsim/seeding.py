"""Named RNG substreams derived from one master seed.

A substream key is the master seed plus a path of names/integers, e.g.
``("sampling", 3, 0)``. Strings map to CRC32 values so the derivation does not
depend on Python's randomized ``hash``. The key feeds ``SeedSequence`` as its
spawn key and the resulting state drives a counter-based Philox generator.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key_part(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    if isinstance(part, (int, np.integer)) and part >= 0:
        return int(part)
    raise TypeError(f"substream key parts must be str or non-negative int, got {part!r}")


def substream(master: int, *path) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(master), spawn_key=tuple(_key_part(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))


def subseed(master: int, *path) -> int:
    """A 63-bit integer seed for APIs that take plain seeds."""
    ss = np.random.SeedSequence(entropy=int(master), spawn_key=tuple(_key_part(p) for p in path))
    lo, hi = (int(v) for v in ss.generate_state(2, dtype=np.uint32))
    return (lo | (hi << 32)) >> 1

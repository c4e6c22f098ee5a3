"""Named, splittable random streams derived from one 64-bit seed.

Every consumer asks for ``stream(seed, "purpose", ...)``; streams with
different names are independent, and adding a new consumer never shifts the
draws of an existing one.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key(name: str | int) -> int:
    if isinstance(name, int):
        return name
    return zlib.crc32(name.encode("utf-8"))


def stream(seed: int, *names: str | int) -> np.random.Generator:
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    ss = np.random.SeedSequence(seed, spawn_key=tuple(_key(n) for n in names))
    return np.random.Generator(np.random.Philox(ss))

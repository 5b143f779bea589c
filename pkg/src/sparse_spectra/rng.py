"""Counter-style random streams.

Every random draw in the package comes from a generator keyed by
``(seed, tag, *counters)``.  The same key always yields the same stream,
whatever process or thread evaluates it, so trial-level parallelism never
changes a result.
"""
from __future__ import annotations

import zlib

import numpy as np


def _tag_word(tag: str | int) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag) & 0xFFFFFFFF
    return zlib.crc32(str(tag).encode("utf-8"))


def stream(seed: int, tag: str | int = 0, *counters: int) -> np.random.Generator:
    """Philox generator for the key ``(seed, tag, *counters)``."""
    if int(seed) < 0:
        raise ValueError("seed must be non-negative")
    words = [int(seed) & 0xFFFFFFFFFFFFFFFF, _tag_word(tag)]
    words += [int(c) & 0xFFFFFFFFFFFFFFFF for c in counters]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))


def child_seed(seed: int, tag: str | int, *counters: int) -> int:
    """A 63-bit integer seed derived from a key, for APIs that take plain ints."""
    words = np.random.SeedSequence([int(seed), _tag_word(tag), *map(int, counters)]).generate_state(2)
    return ((int(words[0]) << 32) | int(words[1])) & ((1 << 63) - 1)

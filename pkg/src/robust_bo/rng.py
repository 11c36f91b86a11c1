"""Keyed counter-based random streams.

Every stream is a Philox generator whose key is derived from a tuple such
as ``(seed, "outlier", trial, iteration)``; the same tuple always yields
the same draws, independent of which other streams were used before.
"""

from __future__ import annotations

import hashlib

import numpy as np

ALGORITHM = "philox4x64-keyed-sha256"


def _word(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFFFFFFFFFF
    digest = hashlib.sha256(str(part).encode()).digest()
    return int.from_bytes(digest[:8], "little")


def keyed_rng(*key) -> np.random.Generator:
    words = [_word(p) for p in key]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))

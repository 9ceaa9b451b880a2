"""Counter-based seeded streams.

Every random draw is keyed by ``(seed, purpose, *indices)`` and served by a fresh
Philox generator, so outputs do not depend on the order in which streams are used.
"""
from __future__ import annotations

import zlib

import numpy as np


def purpose_code(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


def rng_for(seed: int, purpose: str, *indices: int) -> np.random.Generator:
    key = [int(seed) & 0xFFFFFFFF, purpose_code(purpose), *(int(i) & 0xFFFFFFFF for i in indices)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))

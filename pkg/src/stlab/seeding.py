"""Deterministic seed derivation.

A replicate's generator is seeded by a pure function of (master seed,
replicate index, stage tag), so results never depend on scheduling order.
"""
from __future__ import annotations

import zlib

import numpy as np

_MASK = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def stage_code(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


def derive_seed(master: int, replicate: int = 0, stage: str = "") -> int:
    """64-bit seed = splitmix64(splitmix64(splitmix64(master) ^ rep) ^ crc32(stage))."""
    if not 0 <= master <= _MASK:
        raise ValueError(f"seed must be a 64-bit unsigned value, got {master}")
    h = splitmix64(master & _MASK)
    h = splitmix64(h ^ (replicate & _MASK))
    return splitmix64(h ^ stage_code(stage))


def rng_for(master: int, replicate: int = 0, stage: str = "") -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(master, replicate, stage)))

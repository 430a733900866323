"""Deterministic RNG substreams.

All randomness in the package flows from one master seed.  Named substreams
keep consumers independent: adding or removing one consumer (e.g. action
noise) does not shift the draws seen by the others.
"""
from __future__ import annotations

import zlib

import numpy as np


def _token(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part) & 0xFFFFFFFF


def substream(seed: int, *path) -> np.random.Generator:
    """Generator for the substream identified by ``path`` under ``seed``.

    ``path`` elements may be strings (channel names) or integers (epoch or
    cell indices).  The same (seed, path) always yields the same stream.
    """
    entropy = [int(seed)] + [_token(p) for p in path]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def as_generator(seed_or_rng) -> np.random.Generator:
    """Accept either a seed or an existing Generator."""
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(seed_or_rng)

"""Deterministic RNG derivation.

Every stochastic task in the package draws its generator from a master seed
plus a task key, so concurrent or reordered execution cannot change results:
``rng_for(seed, "splits", 3)`` always yields the same stream.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["rng_for"]


def _tag_to_int(tag: str | int) -> int:
    if isinstance(tag, int):
        return tag & 0xFFFFFFFF
    return zlib.crc32(tag.encode("utf-8"))


def rng_for(master_seed: int, *task_key: str | int) -> np.random.Generator:
    """Generator for one task, derived from ``master_seed`` and a task key."""
    entropy = [int(master_seed) & 0xFFFFFFFFFFFFFFFF] + [_tag_to_int(t) for t in task_key]
    return np.random.default_rng(np.random.SeedSequence(entropy))

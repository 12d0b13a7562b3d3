"""Hierarchical seed derivation: one root seed, one stream per named stage."""

from __future__ import annotations

import zlib

import numpy as np


def derive_seed(root: int, *stages: str) -> int:
    if root < 0:
        raise ValueError("seeds must be nonnegative")
    entropy = [root] + [zlib.crc32(s.encode("utf-8")) for s in stages]
    return int(np.random.SeedSequence(entropy).generate_state(1, np.uint32)[0])


def stage_rng(root: int, *stages: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root, *stages))

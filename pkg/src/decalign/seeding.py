"""Deterministic RNG streams derived from a single master seed.

Every random draw in the package flows through `seed_stream`, keyed by the
master seed plus a path of labels, so subsystems (data generation, map
initialization, shuffling, dropout) are independently reproducible and
bit-identical across runs and thread counts.
"""

from __future__ import annotations

import zlib

import numpy as np


def _token(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    return zlib.crc32(str(part).encode("utf-8"))


def seed_sequence(master: int, *path) -> np.random.SeedSequence:
    """Counter-style seed splitter: (master, path labels) -> SeedSequence."""
    if master < 0:
        raise ValueError(f"master seed must be non-negative, got {master}")
    return np.random.SeedSequence(
        entropy=int(master), spawn_key=tuple(_token(p) for p in path)
    )


def seed_stream(master: int, *path) -> np.random.Generator:
    """A fresh Generator for the given (master seed, label path)."""
    return np.random.default_rng(seed_sequence(master, *path))

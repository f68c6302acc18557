"""Deterministic, splittable random streams.

Every stochastic operation in the package takes an explicit 64-bit seed.
Child streams are derived by spawning from ``numpy.random.SeedSequence`` keyed
with integer path components, so independent subsystems never share draws and
runs are bit-reproducible.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key_to_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key) & 0xFFFFFFFFFFFFFFFF
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    raise TypeError(f"seed path component must be int or str, got {type(key)!r}")


def child_seed(seed: int, *path) -> int:
    """Derive a deterministic 64-bit child seed from ``seed`` and a key path."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_key_to_int(k) for k in path]
    ss = np.random.SeedSequence(entropy)
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def spawn_rng(seed: int, *path) -> np.random.Generator:
    """Generator for the stream identified by ``seed`` and a key path."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_key_to_int(k) for k in path]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))

"""Counter-based random draws.

A draw is a pure function of (seed, key, stream, counter), so the same
timestamp always sees the same noise whatever window it is queried through.
"""
from __future__ import annotations

import hashlib

import numpy as np

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def _splitmix(x: np.ndarray) -> np.ndarray:
    x = x + _GOLDEN
    x = (x ^ (x >> np.uint64(30))) * _M1
    x = (x ^ (x >> np.uint64(27))) * _M2
    return x ^ (x >> np.uint64(31))


def _base(seed: int, key: str, stream: str) -> np.uint64:
    digest = hashlib.blake2b(f"{seed}\x00{key}\x00{stream}".encode(), digest_size=8).digest()
    return np.uint64(int.from_bytes(digest, "little"))


def uniform(seed: int, key: str, stream: str, counter) -> np.ndarray:
    """Uniform draws in (0, 1), one per counter value."""
    c = np.atleast_1d(np.asarray(counter, dtype=np.int64)).view(np.uint64)
    with np.errstate(over="ignore"):
        x = _splitmix(_splitmix(c) ^ _base(seed, key, stream))
    return ((x >> np.uint64(11)).astype(np.float64) + 0.5) * (1.0 / 2**53)


def normal(seed: int, key: str, stream: str, counter) -> np.ndarray:
    """Standard normal draws (Box-Muller on two independent uniforms)."""
    c = np.atleast_1d(np.asarray(counter, dtype=np.int64))
    u1 = uniform(seed, key, stream + "/a", c)
    u2 = uniform(seed, key, stream + "/b", c)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)

"""Deterministic stream derivation.

Every random consumer in the package draws from a stream derived from a
seed plus a purpose tag and integer indices (node id, outer/inner
iteration).  Two derivations with the same inputs yield bit-identical
output, which is what makes runs reproducible and lets a sender and its
recipients agree on dither values without exchanging them.
"""

from __future__ import annotations

import zlib

import numpy as np

_M64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def _mix(z: int) -> int:
    """splitmix64 finalizer on plain ints (masked 64-bit arithmetic)."""
    z = (z + _GOLDEN) & _M64
    z = ((z ^ (z >> 30)) * _MIX1) & _M64
    z = ((z ^ (z >> 27)) * _MIX2) & _M64
    return z ^ (z >> 31)


def _part_int(p) -> int:
    if isinstance(p, str):
        return zlib.crc32(p.encode("utf-8"))
    return int(p) & _M64


def derive_key(*parts) -> int:
    """64-bit key for a (seed, tag, indices...) derivation path."""
    acc = 0
    for p in parts:
        acc = _mix(acc ^ _part_int(p))
    return acc


def extend_key(key: int, *parts) -> int:
    """Continue a derivation chain, so
    ``extend_key(derive_key(a, b), c) == derive_key(a, b, c)``."""
    acc = key & _M64
    for p in parts:
        acc = _mix(acc ^ _part_int(p))
    return acc


def stream(*parts) -> np.random.Generator:
    """Full numpy Generator for bulk consumers (matrices, noise, sampling)."""
    return np.random.default_rng(np.random.SeedSequence(derive_key(*parts)))


def _finalize(x: np.ndarray) -> np.ndarray:
    z = x + np.uint64(_GOLDEN)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    u = z ^ (z >> np.uint64(31))
    return (u >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)


def counter_uniform(key: int, offset: int, count: int) -> np.ndarray:
    """`count` i.i.d. uniforms on [0, 1) from a counter-based stream.

    Cheap enough to re-derive per message; `offset` positions the draw
    within the stream so consecutive calls can continue it.
    """
    with np.errstate(over="ignore"):
        ctr = np.arange(offset, offset + count, dtype=np.uint64) * np.uint64(_MIX2)
        return _finalize(np.uint64(key) ^ ctr)


def counter_uniform_keys(keys: np.ndarray, ctrs: np.ndarray) -> np.ndarray:
    """Batched form: one uniform per (key, counter) pair.

    Equals ``counter_uniform(k, 0, n)`` stacked over messages when
    ``keys`` repeats each message key over its components and ``ctrs``
    restarts from zero per message.
    """
    with np.errstate(over="ignore"):
        return _finalize(keys ^ (ctrs * np.uint64(_MIX2)))

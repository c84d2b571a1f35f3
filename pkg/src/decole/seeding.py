"""Seed derivation.

Every random consumer draws from its own stream, derived from a master seed
and a tuple of labels, so adding a consumer never shifts another one.

``derive_seed(master, *labels)`` hashes ``master`` together with the
``repr`` of each label through BLAKE2b (8-byte digest) and returns the
digest as an unsigned 64-bit integer.  ``instance_keys`` maps instance ids to
pseudo-random 64-bit keys with the SplitMix64 finalizer; fold assignment and
the diffracted-oracle draws use it so that a value attached to an instance
depends only on ``(seed, id)`` and not on where the instance sits in a view.
"""

from __future__ import annotations

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def derive_seed(master: int, *labels: object) -> int:
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(master) & MASK64).encode())
    for label in labels:
        h.update(b"\x1f")
        h.update(repr(label).encode())
    return int.from_bytes(h.digest(), "little")


def splitmix64(x: np.ndarray) -> np.ndarray:
    z = np.asarray(x, dtype=np.uint64) + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def instance_keys(seed: int, ids: np.ndarray) -> np.ndarray:
    """64-bit keys for ``ids`` under ``seed``."""
    base = splitmix64(np.array([int(seed) & MASK64], dtype=np.uint64))[0]
    with np.errstate(over="ignore"):
        return splitmix64(np.asarray(ids, dtype=np.uint64) * _GOLDEN ^ base)


def instance_uniforms(seed: int, ids: np.ndarray) -> np.ndarray:
    """Uniform draws in [0, 1) keyed by ``(seed, id)`` (53-bit resolution)."""
    keys = instance_keys(seed, ids)
    return (keys >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))

"""Deterministic RNG fan-out.

All randomness in a run flows from one integer seed.  Components draw named
substreams so that e.g. policy sampling and minibatch shuffling can be
tested in isolation without perturbing each other.  Python's builtin
``hash`` is process-salted, so stream names are mixed in with FNV-1a.
"""

from __future__ import annotations

import numpy as np

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def stable_hash(data: bytes | str) -> int:
    """64-bit FNV-1a hash, stable across processes and platforms."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    h = _FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME) & _MASK64
    return h


def mix_ints(values, seed: int = 0) -> int:
    """Hash a sequence of non-negative ints into a 64-bit value.

    FNV-1a accumulation with a splitmix64 finalizer; the finalizer matters
    because short sequences of tiny ints leave FNV's low bits poorly mixed.
    """
    h = (_FNV_OFFSET ^ (seed & _MASK64)) & _MASK64
    for v in values:
        h ^= v & _MASK64
        h = (h * _FNV_PRIME) & _MASK64
    h = (h ^ (h >> 30)) * 0xBF58476D1CE4E5B9 & _MASK64
    h = (h ^ (h >> 27)) * 0x94D049BB133111EB & _MASK64
    return h ^ (h >> 31)


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for the named substream of ``seed``."""
    return np.random.default_rng([seed & _MASK64, stable_hash(name)])

"""Deterministic stream derivation for every random draw in the package.

All randomness flows from an integer master seed through counter-based
Philox streams keyed by (seed, tag, tag, ...) tuples.  Any unit of work
(a trial, a tuning run, a perturbation) derives its own stream, so results
are bit-identical regardless of execution order or worker count.
"""
from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["derive", "derive_seed", "spawn_key"]

_U32 = 2**32


def spawn_key(tags) -> tuple[int, ...]:
    """Map a sequence of int/str tags to a SeedSequence spawn key.

    Strings are hashed (sha256, first 64 bits); non-negative integers are
    split into 32-bit words.  The mapping is stable across processes and
    platforms.
    """
    key: list[int] = []
    for tag in tags:
        if isinstance(tag, (bool, float)):
            raise TypeError(f"unsupported tag type: {type(tag)!r}")
        if isinstance(tag, (int, np.integer)):
            t = int(tag)
            if t < 0:
                raise ValueError("integer tags must be non-negative")
            key.append(t % _U32)
            t //= _U32
            while t:
                key.append(t % _U32)
                t //= _U32
        elif isinstance(tag, str):
            digest = hashlib.sha256(tag.encode("utf-8")).digest()
            key.append(int.from_bytes(digest[0:4], "little"))
            key.append(int.from_bytes(digest[4:8], "little"))
        else:
            raise TypeError(f"unsupported tag type: {type(tag)!r}")
    return tuple(key)


def derive(seed: int, *tags) -> np.random.Generator:
    """Return a Generator on an independent Philox stream for (seed, *tags)."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=spawn_key(tags))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *tags) -> int:
    """Collapse (seed, *tags) into a plain integer sub-seed."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=spawn_key(tags))
    return int(ss.generate_state(1, np.uint64)[0])

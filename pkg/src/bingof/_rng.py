"""Deterministic random substreams keyed by integer tuples.

Every stochastic routine in the package draws from a generator built as
``substream(seed, *keys)``. The stream depends only on the seed and the keys,
never on the order in which tasks are executed, so parallel and sequential
runs produce bit-identical results.
"""
from __future__ import annotations

import secrets

import numpy as np


def substream(seed: int, *keys: int) -> np.random.Generator:
    """Return an independent generator for ``(seed, keys)``."""
    ss = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=tuple(int(k) for k in keys))
    return np.random.default_rng(ss)


def fresh_seed() -> int:
    """Draw a new 63-bit seed from the OS entropy pool."""
    return secrets.randbits(63)


def as_generator(rng) -> np.random.Generator:
    """Accept an int seed, a ``Generator`` or ``None``."""
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def derive_seed(seed: int, *keys: int) -> int:
    """A 63-bit integer seed determined by ``(seed, keys)``."""
    ss = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))

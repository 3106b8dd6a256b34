"""Counter-based random streams.

Every stream is a Philox generator keyed by ``(seed, *keys)`` so chunk ``i``
of a Monte Carlo run draws the same numbers whatever the worker count.
"""
import zlib

import numpy as np


def _key(k):
    if isinstance(k, str):
        return zlib.crc32(k.encode())
    return int(k)


def stream(seed, *keys):
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


def as_generator(seed_or_rng, *keys):
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return stream(0 if seed_or_rng is None else seed_or_rng, *keys)

"""Stream splitting for reproducible randomness.

A single integer seed is fanned out into independent child streams by
hashing a tuple of keys into a :class:`numpy.random.SeedSequence` spawn
key. String keys go through CRC32 so the mapping is stable across
interpreter runs (``hash()`` is salted per process).
"""

import zlib

import numpy as np


def _key_to_int(key):
    if isinstance(key, (bool, np.bool_)):
        return int(key)
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError(f"negative stream key {key}")
        return int(key)
    return zlib.crc32(str(key).encode("utf-8"))


def derive_seed(seed, *keys):
    """Return a 63-bit child seed for the stream named by ``keys``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key_to_int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def rng_for(seed, *keys):
    """A PCG64 generator on the stream named by ``keys``."""
    return np.random.Generator(np.random.PCG64(derive_seed(seed, *keys)))

# lpf/core/rng.py

"""
Seeded, splittable random streams.

Every draw in the package comes from a stream addressed by a root seed plus a
tuple of keys (namespace strings and integer ids). Child streams are derived
through numpy's SeedSequence hashing, so two streams with different keys are
statistically independent and the same keys always reproduce the same draws,
whatever order or thread they are requested from.
"""
import hashlib
from typing import Union

import numpy as np

StreamKey = Union[int, str, float]


def _key_to_int(key: StreamKey) -> int:
    if isinstance(key, bool):
        return int(key)
    if isinstance(key, int):
        if key < 0:
            raise ValueError(f"stream keys must be non-negative, got {key}")
        return key
    # floats (sweep values) and strings are hashed through their text form
    digest = hashlib.sha256(repr(key).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def seed_sequence(seed: int, *keys: StreamKey) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key_to_int(k) for k in keys))


def stream(seed: int, *keys: StreamKey) -> np.random.Generator:
    """Generator for (seed, *keys); identical arguments give identical draws"""
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, *keys)))


def derive_seed(seed: int, *keys: StreamKey) -> int:
    """64-bit child seed, for handing a substream to code that takes a plain seed"""
    return int(seed_sequence(seed, *keys).generate_state(1, dtype=np.uint64)[0])

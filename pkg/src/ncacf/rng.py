"""Deterministic random-stream derivation.

All randomness in the package flows from a single root seed. Each component
derives its own stream from (root seed, a stable label, optional extra keys
such as an epoch index), so adding or reordering components never perturbs
the streams of the others.
"""

import zlib

import numpy as np


def rng_for(seed: int, label: str, *extra: int) -> np.random.Generator:
    """Return a Generator keyed by (seed, label, *extra).

    The label is hashed with crc32, which is stable across platforms and
    Python versions.
    """
    key = [int(seed), zlib.crc32(label.encode("utf-8"))]
    key.extend(int(x) for x in extra)
    return np.random.default_rng(np.random.SeedSequence(key))

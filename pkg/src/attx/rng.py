"""Seed handling: one run seed, split into named substreams."""
import os
import zlib

import numpy as np

DEFAULT_SEED = 0


def default_seed():
    """Seed from ``ATTX_SEED`` if set, else 0."""
    value = os.environ.get("ATTX_SEED")
    if value is None or value == "":
        return DEFAULT_SEED
    return int(value)


def substream(seed, *names):
    """Generator keyed by ``seed`` and a path of names.

    The same (seed, names) pair always yields the same stream, no matter what
    other streams were drawn before it.
    """
    key = [int(seed) & 0xFFFFFFFF]
    for name in names:
        key.append(zlib.crc32(str(name).encode("utf-8")))
    return np.random.default_rng(np.random.SeedSequence(key))

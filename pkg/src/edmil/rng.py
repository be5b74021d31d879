"""Seed derivation.

Every random stream in the package comes from one integer run seed plus a
tuple of labels (strings or ints). Labels are hashed into the spawn key of a
``numpy.random.SeedSequence`` so streams are independent of call order.
"""

import hashlib

import numpy as np


def _label_key(label):
    if isinstance(label, (int, np.integer)):
        return int(label) & 0xFFFFFFFF
    digest = hashlib.sha256(str(label).encode()).digest()
    return int.from_bytes(digest[:4], "little")


def stream(seed, *labels):
    """Return a Generator for the stream named by ``labels`` under ``seed``."""
    ss = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF,
                                spawn_key=tuple(_label_key(l) for l in labels))
    return np.random.Generator(np.random.Philox(ss))


def episode_streams(seed, n, *labels):
    return [stream(seed, *labels, i) for i in range(n)]

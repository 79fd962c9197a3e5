"""
Deterministic random streams.

Every random draw in the package comes from a PCG64 generator seeded through
:class:`numpy.random.SeedSequence` with a key of integers, e.g.
``(seed, fold_id, user)``.  Keys are hashed stably so the stream for one user
does not depend on the order in which users are processed or on the worker
that processes them.
"""

from __future__ import annotations

import hashlib
import numbers

import numpy as np

# stream namespaces, so keys from different subsystems never collide
UNIFORM_DECOYS = 1
POPULAR_DECOYS = 2
RANDOM_SCORES = 3
SPLIT = 4
LDA_ITEMS = 5
LDA_USER = 6
OBSERVE = 7
ALS_INIT = 8
TRIAL = 9


def key_int(x) -> int:
    """Map an opaque identifier to a non-negative integer, stably across runs."""
    if isinstance(x, (bool, np.bool_)):
        return int(x)
    if isinstance(x, numbers.Integral) and x >= 0:
        return int(x)
    digest = hashlib.blake2b(repr(x).encode(), digest_size=8).digest()
    # high bit marks hashed keys so they cannot alias small integers
    return int.from_bytes(digest, "little") | (1 << 64)


def stream(*key) -> np.random.Generator:
    """Generator for the stream identified by ``key``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([key_int(k) for k in key])))

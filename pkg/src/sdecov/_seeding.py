"""Seed derivation.

Every random stream in the package is addressed by a tuple of non-negative
integers, ``(seed, stream, index, ...)``.  Two calls with the same key get the
same numbers no matter the order in which they happen or which process makes
them.
"""

import numpy as np

# stream tags
COVARIATES = 1
PATHS = 2
BOOTSTRAP = 3
ABC = 4
GIBBS = 5
INIT = 6
EXPERIMENT = 7
PRESET = 8


def seed_key(seed):
    """Normalize an int or tuple seed to a tuple of ints."""
    if isinstance(seed, np.random.SeedSequence):
        ent = seed.entropy
        base = list(ent) if isinstance(ent, (list, tuple)) else [int(ent)]
        return tuple(int(v) for v in base) + tuple(int(v) for v in seed.spawn_key)
    if isinstance(seed, (tuple, list)):
        key = tuple(int(v) for v in seed)
    else:
        key = (int(seed),)
    if any(v < 0 for v in key):
        raise ValueError(f"seed components must be non-negative, got {key}")
    return key


def derive(seed, *keys):
    """Append ``keys`` to ``seed`` and return the extended tuple."""
    return seed_key(seed) + tuple(int(k) for k in keys)


def rng(seed, *keys):
    """Generator for the stream addressed by ``(seed, *keys)``."""
    return np.random.default_rng(np.random.SeedSequence(list(derive(seed, *keys))))

"""Seed handling.

Every stochastic routine takes a ``seed`` that is either an existing
``numpy.random.Generator`` (used as is) or an integer root seed.  Independent
streams are derived from a root seed by ``SeedSequence(root, spawn_key=keys)``
where ``keys`` is a tuple of small integers naming the consumer (see
``STREAMS``), so adding a new consumer never shifts an existing stream.
"""

import numpy as np

STREAMS = {
    "target": 1,
    "init": 2,
    "model": 3,
    "data": 4,
}


def rng_from(seed, *keys):
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None:
        seed = 0
    resolved = tuple(STREAMS[k] if isinstance(k, str) else int(k) for k in keys)
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=resolved))

"""Named random streams.

Every random draw in the pipeline comes from a generator keyed by the global
seed plus a tuple of identifiers, so results do not depend on the order in
which work items are scheduled.
"""

import hashlib

import numpy as np


def _key_to_int(key):
    if isinstance(key, (int, np.integer)):
        return int(key) & 0xFFFFFFFFFFFFFFFF
    digest = hashlib.sha256(str(key).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def stream(global_seed, *keys):
    """Return a ``numpy.random.Generator`` for ``(global_seed, *keys)``."""
    entropy = [int(global_seed) & 0xFFFFFFFF] + [_key_to_int(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def as_generator(rng):
    """Accept ``None``, an int seed or a Generator and return a Generator."""
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)

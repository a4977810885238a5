"""Counter-based random streams.

Every stream is a Philox generator keyed by ``(root_seed, *key)`` through
:class:`numpy.random.SeedSequence`, so a replication's draws depend only on
its key and never on the order in which workers run.
"""

from __future__ import annotations

import numpy as np

DEFAULT_SEED = 20100601


def stream(root_seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(root_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def as_generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None:
        seed = DEFAULT_SEED
    return stream(int(seed))

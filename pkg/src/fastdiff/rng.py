"""Counter-based random streams keyed by integer tuples.

Every stream is a Philox generator whose key is derived from
``(seed, *key)`` through :class:`numpy.random.SeedSequence`, so a path's
draws depend only on its key and never on scheduling. Draws within a stream
are consumed in step order; splitting a draw into chunks of any shape
yields the same sequence.
"""

from __future__ import annotations

import numpy as np

# key namespaces
SPDE = 0
LIMIT = 1
OU_ONLY = 2


def stream(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def path_stream(seed: int, eps_index: int, path: int, namespace: int = SPDE) -> np.random.Generator:
    return stream(seed, namespace, eps_index, path)

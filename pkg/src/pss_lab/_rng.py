"""Counter-based random streams with stable hierarchical keys.

Philox generators keyed by (seed, tag, tag, ...) tuples.  Streams with
distinct keys are statistically independent, and a key always reproduces the
same draws, so results do not depend on how work is split across batches or
worker threads.
"""

from __future__ import annotations

import zlib

import numpy as np


def philox_stream(seed: int, *tags) -> np.random.Generator:
    parts = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for t in tags:
        if isinstance(t, (int, np.integer)):
            parts.append(int(t) & 0xFFFFFFFFFFFFFFFF)
        else:
            parts.append(zlib.crc32(str(t).encode("utf-8")))
    ss = np.random.SeedSequence(parts)
    return np.random.Generator(np.random.Philox(ss))

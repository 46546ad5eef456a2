"""Counter-based random substreams.

A substream is a Philox generator keyed by the 64-bit seed with the
substream coordinates placed in the upper counter words, so distinct
coordinates never overlap and can be generated in any order.
"""

from __future__ import annotations

import numpy as np

SEED_LIMIT = 2**64


def substream(seed: int, index: int, stream: int = 0) -> np.random.Generator:
    if not 0 <= seed < SEED_LIMIT:
        raise ValueError(f"seed must be in [0, 2**64), got {seed}")
    if index < 0 or stream < 0:
        raise ValueError("substream coordinates must be non-negative")
    return np.random.Generator(np.random.Philox(key=seed, counter=[0, index, stream, 0]))

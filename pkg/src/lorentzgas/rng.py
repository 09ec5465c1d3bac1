"""Deterministic stream derivation for reproducible parallel runs.

Every consumer of randomness gets its own counter-based Philox stream
keyed by (seed, worker_id, purpose).  Streams are independent by
construction, so e.g. the two sides of the Kawasaki discrepancy test
cannot share randomness no matter how the work is scheduled.
"""

from __future__ import annotations

import numpy as np

# fixed purpose registry; extend by appending only (keys feed the Philox key)
PURPOSES = {
    "init": 1,
    "jitter": 2,
    "nu0": 3,
    "lhs": 4,
    "rhs": 5,
    "horizon": 6,
    "fit": 7,
    "misc": 8,
}


def stream(seed: int, worker_id: int = 0, purpose: str = "misc") -> np.random.Generator:
    """Philox generator for a (seed, worker, purpose) triple."""
    if purpose not in PURPOSES:
        raise KeyError(f"unknown stream purpose {purpose!r}")
    key = (int(seed) & 0xFFFFFFFFFFFFFFFF) << 64
    key |= (int(worker_id) & 0xFFFFFFFF) << 32
    key |= PURPOSES[purpose]
    return np.random.Generator(np.random.Philox(key=key))

"""Deterministic random substreams for parallel replicates.

Every replicate i of a batch draws from ``substream(seed, i)``, so results do
not depend on how runs are scheduled or split across batches.
"""

import numpy as np

__all__ = ["substream"]


def substream(seed: int, index: int) -> np.random.Generator:
    """Generator for replicate `index`, derived purely from (seed, index)."""
    if index < 0:
        raise ValueError(f"substream index must be >= 0, got {index}")
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))

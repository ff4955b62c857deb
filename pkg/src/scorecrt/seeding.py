"""Deterministic seed fan-out helpers shared across the pipeline stages."""

from __future__ import annotations

import numpy as np

__all__ = ["derive_seeds"]


def derive_seeds(seed: int, count: int) -> list[int]:
    """Expand one seed into ``count`` independent child seeds, reproducibly."""
    state = np.random.SeedSequence(seed).generate_state(count, dtype=np.uint64)
    return [int(s) for s in state]

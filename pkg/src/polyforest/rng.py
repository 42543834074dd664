"""Seed handling.

Every random draw in the package goes through :func:`make_rng`, which builds a
counter-based Philox generator from a :class:`numpy.random.SeedSequence`.
Keys may be plain integers or tuples of integers, so a replication can be
addressed as ``(base_seed, d, n, rep)`` and regenerated in isolation.
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

SeedLike = int | Sequence[int] | np.random.SeedSequence | np.random.Generator | None


def make_rng(seed: SeedLike = None) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(seed))


def derive_seed(*key: int) -> int:
    """Collapse an integer key into a single 63-bit seed."""
    state = np.random.SeedSequence([int(k) for k in key]).generate_state(2, np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))

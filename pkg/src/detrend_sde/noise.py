"""Counter-based innovation streams.

Every innovation block is drawn from a Philox generator keyed by
(seed, step).  Row ``p`` of a block is therefore a pure function of
(seed, step, path, dim): two simulations that share a seed consume
bitwise-identical increments at every (path, step), regardless of which
scheme consumes them, and a run with more paths extends a smaller run
without disturbing its rows.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def _generator(seed: int, step: int) -> np.random.Generator:
    if seed < 0:
        raise ValueError("seed must be nonnegative")
    key = np.array([seed & _MASK64, step & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def normal_block(seed: int, step: int, n_paths: int, dim: int) -> np.ndarray:
    """Standard normal innovations for one time step, shape (n_paths, dim)."""
    return _generator(seed, step).standard_normal((n_paths, dim))


def rademacher_block(seed: int, step: int, n_paths: int, dim: int) -> np.ndarray:
    """Symmetric +/-1 innovations for one time step, shape (n_paths, dim)."""
    bits = _generator(seed, step).integers(0, 2, size=(n_paths, dim))
    return 2.0 * bits - 1.0

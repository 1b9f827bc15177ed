"""Low-discrepancy sampling of space-time boxes for scans and checks."""

from __future__ import annotations

import numpy as np
from scipy.stats import qmc


def sample_box(lo, hi, n: int, seed: int) -> np.ndarray:
    """n quasi-random points in the axis-aligned box [lo, hi], shape (n, dim).

    Scrambled Halton: deterministic for a given seed, no power-of-two
    constraint on n.
    """
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    if lo.shape != hi.shape or np.any(hi < lo):
        raise ValueError("box bounds must have equal shape with hi >= lo")
    engine = qmc.Halton(d=lo.size, scramble=True, seed=seed)
    u = engine.random(n)
    return lo + u * (hi - lo)


def sample_time_box(t_span, lo, hi, n: int, seed: int, include_ends: bool = False):
    """Quasi-random (t, x) samples over t_span x [lo, hi].

    Returns (ts, xs) with ts shape (m,), xs shape (m, dim).  With
    include_ends, a few extra samples are pinned to t = t_span[0] and
    t = t_span[1] so suprema attained on the time boundary are seen.
    """
    t0, t1 = float(t_span[0]), float(t_span[1])
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    pts = sample_box(np.concatenate(([t0], lo)), np.concatenate(([t1], hi)), n, seed)
    ts, xs = pts[:, 0], pts[:, 1:]
    if include_ends:
        n_end = max(2, n // 16)
        ends = sample_box(lo, hi, 2 * n_end, seed + 1)
        ts = np.concatenate([ts, np.full(n_end, t0), np.full(n_end, t1)])
        xs = np.concatenate([xs, ends])
    return ts, xs

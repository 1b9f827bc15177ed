"""Coordinate change that removes the trend from the SDE.

With Yt = g^{-1}(0; t, Y_t), Ito's formula turns

    dY = {F(t, Y) + m(t, Y)} dt + sigma(t, Y) dW

into dYt = m_tilde(t, Yt) dt + sigma_tilde(t, Yt) dW with

    m_tilde(t, y)     = M { m(t, g) - 1/2 sum_{ij} c_ij a_ij(t, g) }
    sigma_tilde(t, y) = M sigma(t, g)

where g = g(t; 0, y), M = g_star_inv(t; 0, y), a = sigma sigma^T and
c_ij is the curvature vector of the inverse map (the quadratic
variation picks up -M c_ij, hence the negative correction).  Both
transformed coefficients are bounded when the derivative bounds and
ellipticity hold, although F itself may be unbounded.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import parallel
from .flow import DEFAULT_TOL, advance_flow_many, flow_jet_many
from .models import ModelSpec
from .noise import normal_block, rademacher_block

SCHEME_ORIGINAL = "original"
SCHEME_TRANSFORMED = "transformed"
SCHEME_MAPPED_BACK = "mapped_back"

# Paths per coefficient-evaluation block; fixed so that threading and
# batch size upstream of a block cannot change adaptive step choices.
# Jet states are small (d + 2 d^2 + d^3 + 1 doubles per path), so large
# blocks amortize the per-step numpy overhead.
_COEFF_BLOCK = 8192


@dataclass
class TransformedCoefficients:
    """Drift and diffusion of the detrended SDE, as plain callables."""

    m_tilde: Callable[[float, np.ndarray], np.ndarray]
    sigma_tilde: Callable[[float, np.ndarray], np.ndarray]
    source: ModelSpec
    flow_tol: float

    def evaluate_batch(self, t: float, ys: np.ndarray, return_jets: bool = False):
        """Coefficients for a batch of states, one shared flow solve."""
        ys = np.asarray(ys, dtype=float)
        jets = flow_jet_many(self.source.drift, 0.0, t, ys,
                             tol=self.flow_tol, order=2)
        g = jets["g"]
        M = jets["g_star_inv"]
        c = jets["c"]
        mv = self.source.bounded_drift(t, g)
        sv = self.source.sigma(t, g)
        a = np.einsum("bip,bjp->bij", sv, sv)
        corr = np.einsum("blij,bij->bl", c, a)
        m_t = np.einsum("bij,bj->bi", M, mv - 0.5 * corr)
        s_t = M @ sv
        if return_jets:
            return m_t, s_t, jets
        return m_t, s_t


def make_transform(model: ModelSpec, flow_tol: float = DEFAULT_TOL) -> TransformedCoefficients:
    """Build the transformed coefficients for a model that satisfies the
    standing assumptions.  Zero drift degenerates to the original pair.

    Flow failures propagate with the offending (t, y) in the message.
    """
    holder: dict = {}

    def m_tilde(t: float, y: np.ndarray) -> np.ndarray:
        m, _ = _eval_single(holder["tc"], t, y)
        return m

    def sigma_tilde(t: float, y: np.ndarray) -> np.ndarray:
        _, s = _eval_single(holder["tc"], t, y)
        return s

    tc = TransformedCoefficients(m_tilde=m_tilde, sigma_tilde=sigma_tilde,
                                 source=model, flow_tol=flow_tol)
    holder["tc"] = tc
    return tc


def _eval_single(tc: TransformedCoefficients, t: float, y: np.ndarray):
    y = np.asarray(y, dtype=float)
    try:
        m, s = tc.evaluate_batch(t, y[None, :])
    except Exception as exc:
        raise type(exc)(f"{exc} (while transforming at t={t!r}, y={y.tolist()})") \
            from exc
    return m[0], s[0]


@dataclass
class PathEnsemble:
    """Euler paths on a shared uniform grid.

    paths has shape (n_paths, n_steps + 1, dim); flagged marks paths
    that left the floating-point range (they keep NaNs from the first
    bad step on, and the run continues).
    """

    times: np.ndarray
    paths: np.ndarray
    seed: int
    scheme: str
    flagged: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.flagged is None:
            self.flagged = np.zeros(self.paths.shape[0], dtype=bool)
        dt = np.diff(self.times)
        if not np.all(dt > 0):
            raise ValueError("times must be strictly increasing")

    @property
    def n_paths(self) -> int:
        return self.paths.shape[0]

    @property
    def dim(self) -> int:
        return self.paths.shape[2]


def _simulate_paths(times: np.ndarray, x0: np.ndarray, n_paths: int, seed: int,
                    coeff_fn, dim: int, noise: str = "normal",
                    store_noise: bool = False):
    """Shared Euler kernel: X_{k+1} = X_k + h mu(t_k, X_k) + sqrt(h) sig xi_k.

    coeff_fn(t, X) returns (mu, sig) for the whole batch.  Both the
    original and the transformed simulations run through this exact
    arithmetic, so coefficient-level equality is path-level equality.
    """
    draw = {"normal": normal_block, "rademacher": rademacher_block}[noise]
    n_steps = times.size - 1
    paths = np.empty((n_paths, n_steps + 1, dim))
    paths[:, 0, :] = x0
    flagged = np.zeros(n_paths, dtype=bool)
    noises = np.empty((n_paths, n_steps, dim)) if store_noise else None
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n_steps):
            h = times[k + 1] - times[k]
            xi = draw(seed, k, n_paths, dim)
            if store_noise:
                noises[:, k, :] = xi
            y = paths[:, k, :]
            safe = np.where(flagged[:, None], x0, y)
            mu, sig = coeff_fn(times[k], safe)
            y_new = y + h * mu + np.sqrt(h) * np.einsum("bij,bj->bi", sig, xi)
            flagged |= ~np.all(np.isfinite(y_new), axis=1)
            paths[:, k + 1, :] = y_new
    return paths, flagged, noises


def simulate_original(model: ModelSpec, n_steps: int, n_paths: int,
                      seed: int) -> PathEnsemble:
    """Euler scheme for the original SDE on the uniform grid over
    [0, horizon]."""
    if n_steps < 1 or n_paths < 1:
        raise ValueError("n_steps and n_paths must be >= 1")
    times = np.linspace(0.0, model.horizon, n_steps + 1)
    times[-1] = model.horizon

    def coeff(t, y):
        return model.drift.f(t, y) + model.bounded_drift(t, y), model.sigma(t, y)

    paths, flagged, _ = _simulate_paths(times, model.x0, n_paths, seed,
                                        coeff, model.dim)
    return PathEnsemble(times=times, paths=paths, seed=seed,
                        scheme=SCHEME_ORIGINAL, flagged=flagged)


def simulate_transformed(tc: TransformedCoefficients, n_steps: int, n_paths: int,
                         seed: int) -> PathEnsemble:
    """Euler scheme for the detrended SDE, consuming the same innovation
    stream as simulate_original for equal (seed, path, step)."""
    if n_steps < 1 or n_paths < 1:
        raise ValueError("n_steps and n_paths must be >= 1")
    model = tc.source
    times = np.linspace(0.0, model.horizon, n_steps + 1)
    times[-1] = model.horizon

    def coeff(t, y):
        if y.shape[0] <= _COEFF_BLOCK:
            return tc.evaluate_batch(t, y)
        # Fixed block boundaries keep the batched step control, and
        # therefore the output bits, independent of the worker count.
        mu = np.empty_like(y)
        sig = np.empty(y.shape + (y.shape[1],))

        def work(sl):
            mu[sl], sig[sl] = tc.evaluate_batch(t, y[sl])
        parallel.run_chunked(work, y.shape[0], block=_COEFF_BLOCK)
        return mu, sig

    paths, flagged, _ = _simulate_paths(times, model.x0, n_paths, seed,
                                        coeff, model.dim)
    return PathEnsemble(times=times, paths=paths, seed=seed,
                        scheme=SCHEME_TRANSFORMED, flagged=flagged)


def map_back(tc: TransformedCoefficients, ensemble: PathEnsemble) -> PathEnsemble:
    """Push a transformed ensemble through g(t_k; 0, .) columnwise."""
    model = tc.source
    mapped = np.empty_like(ensemble.paths)
    mapped[:, 0, :] = ensemble.paths[:, 0, :]
    flagged = ensemble.flagged.copy()
    for k in range(1, ensemble.times.size):
        y = ensemble.paths[:, k, :]
        safe = np.where(flagged[:, None], model.x0, y)
        out = advance_flow_many(model.drift, 0.0, float(ensemble.times[k]),
                                safe, tol=tc.flow_tol)
        mapped[:, k, :] = np.where(flagged[:, None], np.nan, out)
    return PathEnsemble(times=ensemble.times.copy(), paths=mapped,
                        seed=ensemble.seed, scheme=SCHEME_MAPPED_BACK,
                        flagged=flagged)


@dataclass
class DiscrepancyTable:
    """Per-time distance between original paths and back-mapped
    transformed paths under shared noise."""

    times: np.ndarray
    mean: np.ndarray
    max: np.ndarray
    n_steps: int
    n_paths: int
    seed: int
    n_flagged: int

    @property
    def terminal_mean(self) -> float:
        return float(self.mean[-1])

    @property
    def terminal_max(self) -> float:
        return float(self.max[-1])


def pushforward_discrepancy(model: ModelSpec, tc: TransformedCoefficients,
                            n_steps: int, n_paths: int, seed: int) -> DiscrepancyTable:
    """Simulate both schemes with shared noise, map the transformed one
    back, and tabulate ||Y_k - g(t_k; 0, Yt_k)|| over time."""
    orig = simulate_original(model, n_steps, n_paths, seed)
    trans = simulate_transformed(tc, n_steps, n_paths, seed)
    mapped = map_back(tc, trans)
    ok = ~(orig.flagged | mapped.flagged)
    if not np.any(ok):
        raise ValueError("every path overflowed; nothing to compare")
    diff = np.linalg.norm(orig.paths[ok] - mapped.paths[ok], axis=2)
    return DiscrepancyTable(times=orig.times.copy(),
                            mean=diff.mean(axis=0), max=diff.max(axis=0),
                            n_steps=n_steps, n_paths=n_paths, seed=seed,
                            n_flagged=int((~ok).sum()))

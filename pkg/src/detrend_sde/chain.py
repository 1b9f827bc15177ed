"""Euler broken lines, their inversion, and the detrended Markov chain.

The chain X(t_{k+1}) = X(t_k) + h_k {F + m}(t_k, X(t_k))
+ sqrt(h_k) sigma(t_k, X(t_k)) eps_{k+1} lives on a partition whose
step ratios stay bounded.  The drift-only recursion defines the broken
line gh(t_k; 0, x) with layer maps x -> x + h_j F(t_j, x); its Jacobian
satisfies both the summed recursion

    J_{k+1} = I + sum_{j<=k} h_j F_x(t_j, v_j) J_j

and the ordered product  J_m = A_{m-1} ... A_0,  A_j = I + h_j F_x(t_j, v_j),
which the tests hold against each other to machine accuracy.  The
detrended chain is Xt(t_k) = gh^{-1}(0; t_k, X(t_k)); its one-step
increment is exactly

    Xt(t_{k+1}) - Xt(t_k)
        = (int_0^1 Dgh^{-1}(0; t_{k+1}, Psi_u) du) (h_k m + sqrt(h_k) sigma eps)

with Psi_u on the segment from the drift-only prediction to X(t_{k+1}),
so the transformed update is again an Euler step whose coefficients
depend on the realized innovation.  The u-integral is Gauss-Legendre;
the integrand at each node is the inverse Jacobian evaluated via the
product form at the inverted base point.  For linear fields the
integrand is constant in u and the identity is exact for any node count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import parallel
from .diagnostics import ConvergenceTable
from .errors import InversionError
from .flow import DEFAULT_TOL, flow_jet
from .models import DriftSpec, ModelSpec
from .transform import _simulate_paths

DEFAULT_INVERSION_TOL = 1e-12
_NEWTON_CAP = 100
# Paths per transform block; fixed so results do not depend on threads.
_PATH_BLOCK = 64


@dataclass
class Partition:
    """Grid 0 = t_0 < ... < t_n = T with steps h_k = t_{k+1} - t_k and
    recorded max/min step ratio."""

    times: np.ndarray
    steps: np.ndarray
    ratio_c: float

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.steps = np.asarray(self.steps, dtype=float)
        if self.times[0] != 0.0 or not np.all(self.steps > 0):
            raise ValueError("partition must start at 0 with positive steps")
        if abs(self.steps.sum() - self.horizon) > 1e-12 * max(1.0, self.horizon):
            raise ValueError("steps do not sum to the horizon")

    @property
    def n(self) -> int:
        return self.steps.size

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def floor_index(self, t: float) -> int:
        """Largest k with t_k <= t."""
        return int(np.searchsorted(self.times, t, side="right") - 1)


def make_partition(n: int, kind: str = "uniform", T: float = 1.0,
                   c: float = 1.0) -> Partition:
    """Uniform or geometric partition of [0, T].

    The geometric family uses per-step ratio r = 1 + c/n, so the
    realized max/min step ratio r^(n-1) stays below e^c for every n;
    a fixed r independent of n would let the ratio grow without bound
    and is not offered.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not T > 0:
        raise ValueError("T must be positive")
    if kind == "uniform":
        times = np.linspace(0.0, T, n + 1)
        times[-1] = T
        return Partition(times=times, steps=np.diff(times), ratio_c=1.0)
    if kind == "geometric":
        r = 1.0 + c / n
        if r <= 0.0:
            raise ValueError(f"geometric ratio parameter c={c} gives nonpositive steps")
        w = r ** np.arange(n)
        steps = T * w / w.sum()
        times = np.concatenate(([0.0], np.cumsum(steps)))
        times[-1] = T
        steps = np.diff(times)
        return Partition(times=times, steps=steps,
                         ratio_c=float(steps.max() / steps.min()))
    raise ValueError(f"unknown partition kind {kind!r}")


@dataclass
class BrokenLine:
    """Drift-only Euler polygon from one base point with its Jacobians."""

    base: np.ndarray
    values: np.ndarray
    jacobians: np.ndarray
    partition: Partition
    drift: DriftSpec


def broken_line(drift: DriftSpec, partition: Partition, x: np.ndarray) -> BrokenLine:
    """Values gh(t_k; 0, x) and Jacobians by the summed recursion."""
    x = np.asarray(x, dtype=float).reshape(drift.dim)
    d = drift.dim
    n = partition.n
    values = np.empty((n + 1, d))
    jacs = np.empty((n + 1, d, d))
    values[0] = x
    jacs[0] = np.eye(d)
    acc = np.zeros((d, d))
    for k in range(n):
        h = partition.steps[k]
        t = partition.times[k]
        v = values[k][None, :]
        fk = np.asarray(drift.f(t, v))[0]
        jk = np.asarray(drift.jac(t, v))[0]
        acc = acc + h * (jk @ jacs[k])
        values[k + 1] = values[k] + h * fk
        jacs[k + 1] = np.eye(d) + acc
    return BrokenLine(base=x, values=values, jacobians=jacs,
                      partition=partition, drift=drift)


def _layer_matrices(bl: BrokenLine, k: int) -> np.ndarray:
    """A_j = I + h_j F_x(t_j, v_j) for j < k, shape (k, d, d)."""
    d = bl.drift.dim
    out = np.empty((k, d, d))
    for j in range(k):
        jj = np.asarray(bl.drift.jac(bl.partition.times[j], bl.values[j][None, :]))[0]
        out[j] = np.eye(d) + bl.partition.steps[j] * jj
    return out


def product_jacobian(bl: BrokenLine, k: int) -> np.ndarray:
    """Ordered product A_{k-1} ... A_0; equals jacobians[k] in exact
    arithmetic."""
    d = bl.drift.dim
    P = np.eye(d)
    for A in _layer_matrices(bl, k):
        P = A @ P
    return P


def inverse_jacobian_product(bl: BrokenLine, k: int) -> np.ndarray:
    """Ordered product A_0^{-1} ... A_{k-1}^{-1}, the inverse of
    jacobians[k] computed without ever forming it."""
    d = bl.drift.dim
    Q = np.eye(d)
    for A in _layer_matrices(bl, k):
        Q = np.linalg.solve(A.T, Q.T).T
    return Q


def _check_contraction(drift: DriftSpec, partition: Partition) -> None:
    hmax = float(partition.steps.max())
    if hmax * drift.m_f >= 0.5:
        raise InversionError(
            "inversion precondition violated: max step * m_f = "
            f"{hmax * drift.m_f:.3g} >= 0.5; refine the partition")


def _invert_layers_batch(drift: DriftSpec, partition: Partition, k: int,
                         ys: np.ndarray, tol: float,
                         want_jacobian: bool = False):
    """Solve gh(t_k; 0, x) = y for a batch of y, walking layers backward.

    Each layer solves w + h_j F(t_j, w) = z by Newton, contractive under
    the step-size precondition.  When requested, the Jacobian of the
    inverse map at y is accumulated alongside as the ordered product of
    layer inverses evaluated on the very layer values the sweep
    produces.
    """
    d = drift.dim
    b = ys.shape[0]
    v = ys.astype(float).copy()
    eye = np.eye(d)
    Q = np.broadcast_to(eye, (b, d, d)).copy() if want_jacobian else None
    for j in range(k - 1, -1, -1):
        h = partition.steps[j]
        t = partition.times[j]
        z = v
        w = z.copy()
        scale = 1.0 + np.abs(z).max() if z.size else 1.0
        layer_tol = max(1e-14 * scale, tol * 1e-3)
        prev = np.inf
        for it in range(_NEWTON_CAP):
            r = w + h * np.asarray(drift.f(t, w)) - z
            rn = float(np.abs(r).max()) if r.size else 0.0
            if rn <= layer_tol:
                break
            step = np.linalg.solve(eye + h * np.asarray(drift.jac(t, w)), r[..., None])[..., 0]
            if rn > prev and it > 3:
                step *= 0.5
            w = w - step
            prev = rn
        else:
            raise InversionError(
                f"layer {j} Newton stalled after {_NEWTON_CAP} iterations",
                residual=rn)
        v = w
        if want_jacobian:
            A = eye + h * np.asarray(drift.jac(t, v))
            Q = np.linalg.solve(A, Q)
    return (v, Q) if want_jacobian else v


def _forward_values(drift: DriftSpec, partition: Partition, k: int,
                    xs: np.ndarray) -> np.ndarray:
    v = xs.astype(float).copy()
    for j in range(k):
        v = v + partition.steps[j] * np.asarray(drift.f(partition.times[j], v))
    return v


def invert_broken_line(drift: DriftSpec, partition: Partition, k: int,
                       y: np.ndarray, tol: float = DEFAULT_INVERSION_TOL,
                       method: str = "layered") -> np.ndarray:
    """x with gh(t_k; 0, x) = y.

    Requires max_j h_j * m_f < 1/2 so each layer map is invertible by a
    contractive Newton iteration.  The default walks layers backward;
    method="newton" runs a full-map Newton on the composite instead.
    Termination is checked on the composite residual ||gh(t_k;0,x) - y||.
    """
    _check_contraction(drift, partition)
    if not 0 <= k <= partition.n:
        raise ValueError("level k outside the partition")
    y = np.asarray(y, dtype=float).reshape(drift.dim)
    if k == 0:
        return y.copy()
    if method == "layered":
        x = _invert_layers_batch(drift, partition, k, y[None, :], tol)[0]
    elif method == "newton":
        x = y.copy()
        for _ in range(_NEWTON_CAP):
            bl = broken_line(drift, partition, x)
            r = bl.values[k] - y
            if np.linalg.norm(r) <= tol:
                return x
            x = x - np.linalg.solve(bl.jacobians[k], r)
        raise InversionError("full-map Newton did not converge",
                             residual=float(np.linalg.norm(r)))
    else:
        raise ValueError(f"unknown inversion method {method!r}")
    resid = float(np.linalg.norm(
        _forward_values(drift, partition, k, x[None, :])[0] - y))
    if resid > tol:
        # Polish with composite Newton steps from the layered result.
        for _ in range(_NEWTON_CAP):
            bl = broken_line(drift, partition, x)
            r = bl.values[k] - y
            resid = float(np.linalg.norm(r))
            if resid <= tol:
                break
            x = x - np.linalg.solve(bl.jacobians[k], r)
        else:
            raise InversionError("inversion residual did not reach tol",
                                 residual=resid)
    return x


@dataclass
class ChainRun:
    """Simulated chain with stored innovations; bitwise reproducible
    from (model, partition, seed)."""

    partition: Partition
    states: np.ndarray
    innovations: np.ndarray
    seed: int
    flagged: np.ndarray
    innovation_kind: str = "normal"


def simulate_chain(model: ModelSpec, partition: Partition, n_paths: int,
                   seed: int, innovation: str = "normal") -> ChainRun:
    """Euler chain on the given partition.  On a uniform partition with
    the same seed this reproduces simulate_original bitwise."""
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    if innovation not in ("normal", "rademacher"):
        raise ValueError("innovation must be 'normal' or 'rademacher'")

    def coeff(t, y):
        return model.drift.f(t, y) + model.bounded_drift(t, y), model.sigma(t, y)

    paths, flagged, noises = _simulate_paths(
        partition.times, model.x0, n_paths, seed, coeff, model.dim,
        noise=innovation, store_noise=True)
    return ChainRun(partition=partition, states=paths, innovations=noises,
                    seed=seed, flagged=flagged, innovation_kind=innovation)


@dataclass
class TransformedChainRun:
    """Detrended chain states with per-step coefficients and the
    residuals of the exactness checks."""

    partition: Partition
    states: np.ndarray
    m_coeffs: np.ndarray
    sigma_coeffs: np.ndarray
    identity_residuals: np.ndarray
    reconstruction_residuals: np.ndarray
    seed: int
    quad_nodes: int
    flagged: np.ndarray
    source: ChainRun


def _gauss_legendre_01(q: int):
    x, w = np.polynomial.legendre.leggauss(q)
    return 0.5 * (x + 1.0), 0.5 * w


def transform_chain(model: ModelSpec, partition: Partition, run: ChainRun,
                    quad_nodes: int = 8,
                    inversion_tol: float = DEFAULT_INVERSION_TOL) -> TransformedChainRun:
    """Detrend a simulated chain.

    For each step the inverse broken-line map at level k+1 is evaluated
    at the chain state (giving Xt) and at the Gauss-Legendre nodes on
    the prediction segment (giving the averaged inverse Jacobian that
    multiplies m and sigma).  Stores per-step residuals of the one-step
    identity and of the forward reconstruction gh(t_k; 0, Xt_k) = X_k.
    """
    if quad_nodes < 2:
        raise ValueError("quad_nodes must be >= 2")
    if run.partition.times.shape != partition.times.shape or \
            not np.array_equal(run.partition.times, partition.times):
        raise ValueError("run was simulated on a different partition")
    _check_contraction(model.drift, partition)

    drift = model.drift
    d = model.dim
    n = partition.n
    P = run.states.shape[0]
    u_nodes, u_weights = _gauss_legendre_01(quad_nodes)
    q = quad_nodes

    states = np.empty((P, n + 1, d))
    m_co = np.empty((P, n, d))
    s_co = np.empty((P, n, d, d))
    resid_id = np.zeros((P, n))
    resid_rec = np.zeros((P, n + 1))
    states[:, 0] = run.states[:, 0]
    x0 = run.states[:, 0]
    flagged = run.flagged.copy()

    def work(sl: slice):
        X = run.states[sl]
        eps = run.innovations[sl]
        bad = flagged[sl]
        p = X.shape[0]
        safe = lambda arr: np.where(bad[:, None], x0[sl], arr)
        for k in range(n):
            t_k = partition.times[k]
            h = partition.steps[k]
            xk = safe(X[:, k])
            xk1 = safe(X[:, k + 1])
            fk = np.asarray(drift.f(t_k, xk))
            base = xk + h * fk
            delta = xk1 - base
            pts = base[None, :, :] + u_nodes[:, None, None] * delta[None, :, :]
            batch = np.concatenate([pts.reshape(q * p, d), xk1], axis=0)
            inv, Q = _invert_layers_batch(drift, partition, k + 1, batch,
                                          inversion_tol, want_jacobian=True)
            Qbar = np.einsum("u,upij->pij", u_weights,
                             Q[:q * p].reshape(q, p, d, d))
            xt_next = inv[q * p:]
            mk = np.asarray(model.bounded_drift(t_k, xk))
            sk = np.asarray(model.sigma(t_k, xk))
            m_co[sl, k] = np.einsum("pij,pj->pi", Qbar, mk)
            s_co[sl, k] = Qbar @ sk
            states[sl, k + 1] = np.where(bad[:, None], np.nan, xt_next)
            r = xt_next - safe(states[sl, k]) - h * m_co[sl, k] \
                - np.sqrt(h) * np.einsum("pij,pj->pi", s_co[sl, k], eps[:, k])
            resid_id[sl, k] = np.where(bad, np.nan, np.linalg.norm(r, axis=1))
            rec = _forward_values(drift, partition, k + 1, xt_next) - xk1
            resid_rec[sl, k + 1] = np.where(bad, np.nan,
                                            np.linalg.norm(rec, axis=1))

    # Fixed block boundaries: the layer Newton stops on a batch-max
    # residual, so chunking must not depend on the worker count.
    parallel.run_chunked(work, P, block=_PATH_BLOCK)
    return TransformedChainRun(partition=partition, states=states,
                               m_coeffs=m_co, sigma_coeffs=s_co,
                               identity_residuals=resid_id,
                               reconstruction_residuals=resid_rec,
                               seed=run.seed, quad_nodes=quad_nodes,
                               flagged=flagged, source=run)


def jacobian_limit_check(drift: DriftSpec, x: np.ndarray, t: float,
                         n_list, flow_tol: float = DEFAULT_TOL) -> ConvergenceTable:
    """Distance of the broken-line Jacobian at the grid point below t
    from the flow Jacobian, tabulated over refinements; first-order
    in the step."""
    x = np.asarray(x, dtype=float).reshape(drift.dim)
    ref = flow_jet(drift, 0.0, t, x, tol=flow_tol).g_star
    rows = []
    for n in n_list:
        part = make_partition(int(n), "uniform", T=t)
        bl = broken_line(drift, part, x)
        idx = part.floor_index(t)
        err = float(np.linalg.norm(bl.jacobians[idx] - ref, 2))
        rows.append((t / int(n), err))
    return ConvergenceTable.from_pairs(rows)

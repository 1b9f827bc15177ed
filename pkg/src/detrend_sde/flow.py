"""Phase flow of the drift ODE and its variational jets.

For dx/dt = F(t, x) with flow g(t; t0, x), the module integrates, in one
augmented system,

    y  = g(t; t0, x)
    Z  = dg/dx                  dZ/dt = F_x(t, y) Z,        Z(t0) = I
    M  = Z^{-1}                 dM/dt = -M F_x(t, y),       M(t0) = I
    W  = d2g/dx2                dW/dt = F_x W + F_xx(Z, Z), W(t0) = 0
    s  = int trace F_x(u, y(u)) du

M is co-integrated (adjoint route) rather than obtained by inverting Z
at the endpoint, which keeps Z M = I to integration accuracy.  The
curvature tensor of the inverse map,

    c[i, j, k] = sum_{l,p} W[i, l, p] M[p, j] M[l, k],

is symmetric in (j, k) and vanishes identically for linear fields; the
second derivative of the inverse map is -M c.  exp(s) reproduces det Z
(Liouville), giving an independent route to the determinant.

All entry points accept a single point or a batch; a batch is advanced
on one shared adaptive grid, error-controlled across all members.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rk
from .errors import SingularJacobianError
from .models import DriftSpec

DEFAULT_TOL = 1e-10
_DET_FLOOR = 1e-12


@dataclass
class FlowJet:
    """Flow value and derivatives at (t; t0, x)."""

    g: np.ndarray
    g_star: np.ndarray
    g_star_inv: np.ndarray
    det_g_star: float
    c: np.ndarray
    t0: float
    t: float
    x: np.ndarray


def _identity_jets(xs: np.ndarray, order: int) -> dict:
    b, d = xs.shape
    out = {
        "g": xs.copy(),
        "g_star": np.broadcast_to(np.eye(d), (b, d, d)).copy(),
        "g_star_inv": np.broadcast_to(np.eye(d), (b, d, d)).copy(),
        "det_g_star": np.ones(b),
        "trace_integral": np.zeros(b),
    }
    if order >= 2:
        out["c"] = np.zeros((b, d, d, d))
    return out


def _rhs_state(drift: DriftSpec):
    def rhs(t, u):
        return drift.f(t, u)
    return rhs


def _rhs_first(drift: DriftSpec, d: int):
    dd = d * d

    def rhs(t, u):
        y = u[:, :d]
        Z = u[:, d:d + dd].reshape(-1, d, d)
        M = u[:, d + dd:d + 2 * dd].reshape(-1, d, d)
        F = drift.f(t, y)
        J = drift.jac(t, y)
        out = np.empty_like(u)
        out[:, :d] = F
        out[:, d:d + dd] = (J @ Z).reshape(-1, dd)
        out[:, d + dd:d + 2 * dd] = (-(M @ J)).reshape(-1, dd)
        out[:, -1] = np.einsum("bii->b", J)
        return out
    return rhs


def _rhs_full(drift: DriftSpec, d: int):
    dd, ddd = d * d, d * d * d

    def rhs(t, u):
        y = u[:, :d]
        Z = u[:, d:d + dd].reshape(-1, d, d)
        M = u[:, d + dd:d + 2 * dd].reshape(-1, d, d)
        W = u[:, d + 2 * dd:d + 2 * dd + ddd].reshape(-1, d, d, d)
        F = drift.f(t, y)
        J = drift.jac(t, y)
        H = drift.hess(t, y)
        out = np.empty_like(u)
        out[:, :d] = F
        out[:, d:d + dd] = (J @ Z).reshape(-1, dd)
        out[:, d + dd:d + 2 * dd] = (-(M @ J)).reshape(-1, dd)
        dW = np.einsum("bil,bljk->bijk", J, W) \
            + np.einsum("bilp,blj,bpk->bijk", H, Z, Z)
        out[:, d + 2 * dd:d + 2 * dd + ddd] = dW.reshape(-1, ddd)
        out[:, -1] = np.einsum("bii->b", J)
        return out
    return rhs


def _as_batch(x: np.ndarray, d: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return x[None, :], True
    if x.ndim == 2 and x.shape[1] == d:
        return x, False
    raise ValueError(f"state must have shape ({d},) or (batch, {d})")


def advance_flow_many(drift: DriftSpec, t0: float, t1: float, xs: np.ndarray,
                      tol: float = DEFAULT_TOL,
                      fixed_steps: int | None = None) -> np.ndarray:
    xs, _ = _as_batch(xs, drift.dim)
    if t1 == t0:
        return xs.copy()
    return rk.integrate(_rhs_state(drift), t0, t1, xs, rtol=tol,
                        fixed_steps=fixed_steps)


def advance_flow(drift: DriftSpec, t0: float, t1: float, x: np.ndarray,
                 tol: float = DEFAULT_TOL,
                 fixed_steps: int | None = None) -> np.ndarray:
    """g(t1; t0, x).  t1 < t0 integrates backward along the same field."""
    return advance_flow_many(drift, t0, t1, np.asarray(x, dtype=float)[None, :],
                             tol, fixed_steps)[0]


def flow_jet_many(drift: DriftSpec, t0: float, t1: float, xs: np.ndarray,
                  tol: float = DEFAULT_TOL, order: int = 2) -> dict:
    """Jets for a batch of base points; order 1 omits W and c.

    Returns arrays keyed g, g_star, g_star_inv, det_g_star,
    trace_integral and (order 2) c.
    """
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    xs, _ = _as_batch(xs, drift.dim)
    b, d = xs.shape
    if t1 == t0:
        return _identity_jets(xs, order)
    dd, ddd = d * d, d * d * d
    nvar = d + 2 * dd + 1 + (ddd if order == 2 else 0)
    u0 = np.zeros((b, nvar))
    u0[:, :d] = xs
    eye = np.eye(d).ravel()
    u0[:, d:d + dd] = eye
    u0[:, d + dd:d + 2 * dd] = eye
    rhs = _rhs_full(drift, d) if order == 2 else _rhs_first(drift, d)
    u = rk.integrate(rhs, t0, t1, u0, rtol=tol)
    out = {
        "g": u[:, :d].copy(),
        "g_star": u[:, d:d + dd].reshape(b, d, d).copy(),
        "g_star_inv": u[:, d + dd:d + 2 * dd].reshape(b, d, d).copy(),
        "trace_integral": u[:, -1].copy(),
    }
    out["det_g_star"] = np.linalg.det(out["g_star"])
    if np.any(np.abs(out["det_g_star"]) < _DET_FLOOR):
        raise SingularJacobianError(
            f"flow Jacobian numerically singular on [{t0}, {t1}]")
    if order == 2:
        W = u[:, d + 2 * dd:d + 2 * dd + ddd].reshape(b, d, d, d)
        M = out["g_star_inv"]
        out["c"] = np.einsum("bilp,bpj,blk->bijk", W, M, M)
    return out


def flow_jet(drift: DriftSpec, t0: float, t1: float, x: np.ndarray,
             tol: float = DEFAULT_TOL) -> FlowJet:
    """Full jet at a single base point."""
    x = np.asarray(x, dtype=float)
    jets = flow_jet_many(drift, t0, t1, x[None, :], tol, order=2)
    return FlowJet(g=jets["g"][0], g_star=jets["g_star"][0],
                   g_star_inv=jets["g_star_inv"][0],
                   det_g_star=float(jets["det_g_star"][0]), c=jets["c"][0],
                   t0=float(t0), t=float(t1), x=x.copy())


def inverse_flow_many(drift: DriftSpec, t: float, ys: np.ndarray,
                      tol: float = DEFAULT_TOL) -> np.ndarray:
    return advance_flow_many(drift, t, 0.0, ys, tol)


def inverse_flow(drift: DriftSpec, t: float, y: np.ndarray,
                 tol: float = DEFAULT_TOL) -> np.ndarray:
    """g^{-1}(0; t, y): the point whose forward flow reaches y at time t.

    Round trip through advance_flow returns y within about
    10 * tol * (1 + |y|).
    """
    return inverse_flow_many(drift, t, np.asarray(y, dtype=float)[None, :], tol)[0]


def flow_time_derivatives(drift: DriftSpec, t0: float, t: float, x: np.ndarray,
                          tol: float = DEFAULT_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Analytic time derivatives of the flow pair at (t; t0, x).

    Returns (d_t0_g, d_t_ginv):
      d_t0_g   = -g_star(t; t0, x) F(t0, x), the sensitivity of the
                 forward flow to its start time;
      d_t_ginv = -g_star_inv(t; 0, xh) F(t, y), the time derivative of
                 y -> g^{-1}(0; t, y) at fixed y = g(t; t0, x), where
                 xh = g^{-1}(0; t, y).
    """
    x = np.asarray(x, dtype=float)
    jets = flow_jet_many(drift, t0, t, x[None, :], tol, order=1)
    y = jets["g"][0]
    f0 = np.asarray(drift.f(t0, x[None, :]))[0]
    d_t0_g = -jets["g_star"][0] @ f0
    if t0 == 0.0:
        xh = x
        m = jets["g_star_inv"][0]
    else:
        xh = inverse_flow(drift, t, y, tol)
        m = flow_jet_many(drift, 0.0, t, xh[None, :], tol, order=1)["g_star_inv"][0]
    ft = np.asarray(drift.f(t, y[None, :]))[0]
    d_t_ginv = -m @ ft
    return d_t0_g, d_t_ginv


def liouville_determinant(drift: DriftSpec, t0: float, t: float, x: np.ndarray,
                          tol: float = DEFAULT_TOL) -> tuple[float, float]:
    """det g_star by two routes: directly from the integrated Jacobian,
    and as exp of the trace integral along the trajectory."""
    x = np.asarray(x, dtype=float)
    jets = flow_jet_many(drift, t0, t, x[None, :], tol, order=1)
    return float(jets["det_g_star"][0]), float(np.exp(jets["trace_integral"][0]))

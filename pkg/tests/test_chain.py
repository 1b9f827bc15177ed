"""Partitions, broken lines, chain inversion, and the discrete transform."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from detrend_sde import (InversionError, builtin_model, broken_line,
                         inverse_jacobian_product, invert_broken_line,
                         jacobian_limit_check, make_partition,
                         product_jacobian, simulate_chain, simulate_original,
                         transform_chain)
from tests.conftest import make_swap_drift

TELESCOPE_TOL = 1e-12
INVERSE_PRODUCT_TOL = 1e-10
LINEAR_COEFF_TOL = 1e-10
IDENTITY_Q8_TOL = 1e-9
RECONSTRUCTION_TOL = 1e-8


def test_uniform_partition_layout():
    p = make_partition(8, "uniform", T=2.0)
    assert p.n == 8
    assert p.times[0] == 0.0 and p.times[-1] == 2.0
    assert_allclose(p.steps, 0.25)
    assert p.ratio_c == pytest.approx(1.0)


def test_geometric_partition_bounded_ratio():
    p = make_partition(50, "geometric", T=1.0, c=1.0)
    assert p.times[0] == 0.0
    assert p.times[-1] == pytest.approx(1.0, abs=1e-14)
    # Ratio (1 + c/n)^(n-1) stays below e^c.
    assert p.ratio_c <= np.e
    assert np.all(np.diff(p.steps) > 0)


def test_unknown_partition_kind():
    with pytest.raises(ValueError):
        make_partition(4, "fibonacci")


def test_floor_index():
    p = make_partition(4, "uniform", T=1.0)
    assert p.floor_index(0.0) == 0
    assert p.floor_index(0.26) == 1
    assert p.floor_index(1.0) == 4


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 200), st.floats(0.1, 2.0))
def test_geometric_partition_invariants(n, c):
    p = make_partition(n, "geometric", T=1.5, c=c)
    assert p.steps.size == n
    assert np.all(p.steps > 0)
    assert p.steps.sum() == pytest.approx(1.5, abs=1e-12)
    assert p.ratio_c <= np.exp(c) * (1 + 1e-12)


def test_broken_line_linear_closed_form():
    drift = builtin_model("linear", b=0.7).drift
    p = make_partition(16, "geometric", T=1.0, c=0.8)
    bl = broken_line(drift, p, np.array([2.0]))
    factors = np.concatenate([[1.0], np.cumprod(1.0 + 0.7 * p.steps)])
    assert_allclose(bl.values[:, 0], 2.0 * factors, rtol=1e-14)
    assert_allclose(bl.jacobians[:, 0, 0], factors, rtol=1e-14)


@pytest.mark.parametrize("n", [10, 100, 1000])
def test_summed_recursion_equals_ordered_product(n):
    drift = make_swap_drift()
    p = make_partition(n, "uniform", T=1.0)
    bl = broken_line(drift, p, np.array([0.4, -0.1]))
    for k in (n // 2, n):
        diff = np.abs(bl.jacobians[k] - product_jacobian(bl, k)).max()
        assert diff <= TELESCOPE_TOL


def test_inverse_product_route(swap_drift):
    p = make_partition(64, "geometric", T=1.0, c=1.0)
    bl = broken_line(swap_drift, p, np.array([0.2, 0.6]))
    direct = np.linalg.inv(bl.jacobians[64])
    assert np.abs(inverse_jacobian_product(bl, 64) - direct).max() <= INVERSE_PRODUCT_TOL


def test_gronwall_bound_both_partitions():
    model = builtin_model("sine", alpha=0.8, beta=1.3, dim=2)
    bound = np.sqrt(2) * np.exp(model.drift.m_f * model.horizon)
    for kind in ("uniform", "geometric"):
        p = make_partition(1000, kind, T=model.horizon, c=1.0)
        bl = broken_line(model.drift, p, model.x0)
        norms = np.linalg.norm(bl.jacobians, axis=(1, 2))
        assert norms.max() <= bound


def test_chain_matches_original_euler_bitwise():
    model = builtin_model("sine", alpha=0.6, beta=1.1, dim=2)
    p = make_partition(32, "uniform", T=model.horizon)
    run = simulate_chain(model, p, 7, seed=4)
    ens = simulate_original(model, 32, 7, seed=4)
    assert np.array_equal(run.states, ens.paths)
    assert np.array_equal(run.partition.times, ens.times)


def test_chain_regeneration_bitwise():
    model = builtin_model("sine")
    p = make_partition(16, "geometric", T=1.0, c=0.5)
    a = simulate_chain(model, p, 5, seed=11)
    b = simulate_chain(model, p, 5, seed=11)
    assert np.array_equal(a.states, b.states)
    assert np.array_equal(a.innovations, b.innovations)


def test_inversion_roundtrip_both_methods(swap_drift):
    p = make_partition(40, "uniform", T=1.0)
    bl = broken_line(swap_drift, p, np.array([0.3, -0.5]))
    y = bl.values[40]
    for method in ("layered", "newton"):
        x = invert_broken_line(swap_drift, p, 40, y, method=method)
        assert_allclose(x, [0.3, -0.5], atol=1e-10)
    assert invert_broken_line(swap_drift, p, 0, y) is not y


def test_inversion_contraction_guard():
    drift = builtin_model("sine").drift  # m_f = 1
    p = make_partition(1, "uniform", T=1.0)  # h = 1, h*m_f >= 1/2
    with pytest.raises(InversionError):
        invert_broken_line(drift, p, 1, np.array([0.2]))


def test_linear_chain_coefficients_closed_form():
    # With linear trend the averaged inverse Jacobian is u-independent:
    # m_t(k) = prod_{j<=k}(1 + h_j b)^{-1} m, same for sigma, and the
    # one-step identity holds to rounding.
    b, m0, s0 = 0.8, 0.6, 1.2
    model = builtin_model("linear", b=b, m0=m0, sigma0=s0)
    p = make_partition(32, "geometric", T=1.0, c=0.7)
    run = simulate_chain(model, p, 6, seed=2)
    tr = transform_chain(model, p, run, quad_nodes=2)
    factors = np.cumprod(1.0 + b * p.steps)
    assert np.abs(tr.m_coeffs[:, :, 0] - m0 / factors).max() <= LINEAR_COEFF_TOL
    assert np.abs(tr.sigma_coeffs[:, :, 0, 0] - s0 / factors).max() <= LINEAR_COEFF_TOL
    assert np.nanmax(tr.identity_residuals) <= 1e-12
    assert np.nanmax(tr.reconstruction_residuals) <= 1e-10


def test_identity_residual_decreases_with_quadrature(sine2_model):
    p = make_partition(64, "uniform", T=sine2_model.horizon)
    run = simulate_chain(sine2_model, p, 8, seed=0)
    worsts = []
    for q in (2, 4, 8):
        tr = transform_chain(sine2_model, p, run, quad_nodes=q)
        worsts.append(float(np.nanmax(tr.identity_residuals)))
    assert worsts[0] > worsts[1] > worsts[2]
    assert worsts[2] <= IDENTITY_Q8_TOL


def test_reconstruction_residual(sine2_model):
    p = make_partition(128, "geometric", T=sine2_model.horizon, c=1.0)
    run = simulate_chain(sine2_model, p, 8, seed=1)
    tr = transform_chain(sine2_model, p, run, quad_nodes=8)
    assert np.nanmax(tr.reconstruction_residuals) <= RECONSTRUCTION_TOL
    assert tr.states.shape == run.states.shape
    assert np.array_equal(tr.states[:, 0], run.states[:, 0])


def test_zero_drift_chain_transform_is_identity():
    model = builtin_model("zero_drift", dim=2)
    p = make_partition(16, "uniform", T=1.0)
    run = simulate_chain(model, p, 4, seed=9)
    tr = transform_chain(model, p, run)
    assert_allclose(tr.states, run.states, atol=1e-13)
    assert np.nanmax(tr.identity_residuals) <= 1e-13


def test_quad_nodes_validation(sine2_model):
    p = make_partition(8, "uniform", T=sine2_model.horizon)
    run = simulate_chain(sine2_model, p, 2, seed=0)
    with pytest.raises(ValueError):
        transform_chain(sine2_model, p, run, quad_nodes=1)


def test_partition_mismatch_rejected(sine2_model):
    p = make_partition(8, "uniform", T=sine2_model.horizon)
    run = simulate_chain(sine2_model, p, 2, seed=0)
    other = make_partition(8, "geometric", T=sine2_model.horizon, c=1.0)
    with pytest.raises(ValueError):
        transform_chain(sine2_model, other, run)


def test_rademacher_innovations():
    model = builtin_model("sine")
    p = make_partition(8, "uniform", T=1.0)
    run = simulate_chain(model, p, 3, seed=5, innovation="rademacher")
    assert set(np.unique(run.innovations)) == {-1.0, 1.0}
    assert run.innovation_kind == "rademacher"


def test_jacobian_limit_order(sine2_model):
    tab = jacobian_limit_check(sine2_model.drift, sine2_model.x0,
                               sine2_model.horizon, [32, 64, 128, 256])
    assert 0.8 <= tab.slope <= 1.2
    assert tab.monotone_violations == 0


def test_chain_blocks_independent_of_threads(sine2_model, monkeypatch):
    import detrend_sde.chain as chain_mod
    monkeypatch.setattr(chain_mod, "_PATH_BLOCK", 3)
    p = make_partition(16, "uniform", T=sine2_model.horizon)
    run = simulate_chain(sine2_model, p, 10, seed=6)
    serial = transform_chain(sine2_model, p, run)
    monkeypatch.setenv("DETREND_SDE_THREADS", "4")
    threaded = transform_chain(sine2_model, p, run)
    assert np.array_equal(serial.states, threaded.states)
    assert np.array_equal(serial.m_coeffs, threaded.m_coeffs)

"""Noise blocks, quasi-random sampling, thread chunking, and the
embedded Runge-Kutta integrator."""

import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy.linalg import expm

from detrend_sde import FlowIntegrationError, normal_block, rademacher_block
from detrend_sde import parallel, rk
from detrend_sde.sampling import sample_box, sample_time_box

RK_TOL = 1e-10


def test_normal_block_deterministic():
    a = normal_block(7, 3, 50, 2)
    b = normal_block(7, 3, 50, 2)
    assert a.shape == (50, 2)
    assert np.array_equal(a, b)


def test_normal_block_prefix_stable():
    # Row p depends only on (seed, step, p, dim): growing the batch must
    # not disturb earlier paths.
    big = normal_block(11, 5, 64, 3)
    small = normal_block(11, 5, 16, 3)
    assert np.array_equal(big[:16], small)


def test_normal_block_decorrelated_across_steps():
    a = normal_block(0, 0, 2000, 1).ravel()
    b = normal_block(0, 1, 2000, 1).ravel()
    assert not np.array_equal(a, b)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.1
    assert abs(a.mean()) < 0.1 and abs(a.std() - 1.0) < 0.1


def test_normal_block_seed_sensitivity():
    assert not np.array_equal(normal_block(0, 0, 8, 2), normal_block(1, 0, 8, 2))


def test_negative_seed_rejected():
    with pytest.raises(ValueError):
        normal_block(-1, 0, 4, 1)


def test_rademacher_values():
    x = rademacher_block(3, 9, 500, 2)
    assert set(np.unique(x)) == {-1.0, 1.0}
    assert np.array_equal(x, rademacher_block(3, 9, 500, 2))


def test_sample_box_bounds_and_determinism():
    lo, hi = np.array([-1.0, 2.0]), np.array([1.0, 5.0])
    xs = sample_box(lo, hi, 200, seed=4)
    assert xs.shape == (200, 2)
    assert np.all(xs >= lo) and np.all(xs <= hi)
    assert np.array_equal(xs, sample_box(lo, hi, 200, seed=4))
    assert not np.array_equal(xs, sample_box(lo, hi, 200, seed=5))


def test_sample_time_box_include_ends():
    lo, hi = np.array([0.0]), np.array([1.0])
    ts, xs = sample_time_box((0.25, 2.0), lo, hi, 64, seed=0, include_ends=True)
    assert ts.shape[0] == xs.shape[0]
    assert np.any(ts == 0.25) and np.any(ts == 2.0)
    assert ts.min() >= 0.25 and ts.max() <= 2.0


def test_path_chunks_cover_everything():
    for n, w in [(10, 3), (1, 4), (7, 7), (100, 1)]:
        chunks = parallel.path_chunks(n, w)
        idx = np.concatenate([np.arange(s.start, s.stop) for s in chunks])
        assert np.array_equal(idx, np.arange(n))


def test_run_chunked_matches_serial(monkeypatch):
    monkeypatch.setenv(parallel.ENV_THREADS, "4")
    out = np.zeros(97)

    def work(sl):
        out[sl] = np.arange(sl.start, sl.stop) ** 2
    parallel.run_chunked(work, 97)
    assert_allclose(out, np.arange(97.0) ** 2)


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv(parallel.ENV_THREADS, "3")
    assert parallel.worker_count() == 3
    monkeypatch.delenv(parallel.ENV_THREADS)
    assert parallel.worker_count() == 1


def test_rk_linear_vs_expm():
    b = np.array([[0.2, -1.0], [0.5, 0.1]])

    def rhs(t, y):
        return y @ b.T
    y0 = np.array([[1.0, -0.5], [0.3, 2.0]])
    got = rk.integrate(rhs, 0.0, 1.3, y0, rtol=1e-12, atol=1e-14)
    want = y0 @ expm(1.3 * b).T
    assert_allclose(got, want, rtol=RK_TOL, atol=RK_TOL)


def test_rk_backward_direction():
    def rhs(t, y):
        return -y
    got = rk.integrate(rhs, 1.0, 0.0, np.array([[np.exp(-1.0)]]),
                       rtol=1e-12, atol=1e-14)
    assert_allclose(got, [[1.0]], rtol=1e-9)


def test_rk_zero_span_is_identity():
    y0 = np.array([[1.0, 2.0]])
    got = rk.integrate(lambda t, y: y, 0.5, 0.5, y0)
    assert np.array_equal(got, y0)


def test_rk_fixed_steps():
    def rhs(t, y):
        return y
    got = rk.integrate(rhs, 0.0, 1.0, np.array([[1.0]]), fixed_steps=200)
    assert_allclose(got, [[np.e]], rtol=1e-11)


def test_rk_nonfinite_raises():
    def rhs(t, y):
        return y * y
    # Blows up at t = 1/y0; the integrator must fail loudly, reporting
    # how far it got.
    with pytest.raises(FlowIntegrationError) as exc:
        rk.integrate(rhs, 0.0, 2.0, np.array([[1.0]]))
    assert 0.9 <= exc.value.t_reached <= 1.05


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=0, max_value=2 ** 31), st.integers(0, 1000))
def test_noise_block_shapes(seed, step):
    x = normal_block(seed, step, 3, 4)
    assert x.shape == (3, 4) and np.all(np.isfinite(x))

import math

import numpy as np
import pytest

import miq.fitter as ft
from miq import (
    ConfigError,
    DomainError,
    EdcfModel,
    FitConfig,
    MiCurve,
    NumericalError,
    SnrGrid,
    canonical_grid,
    eval_edcf,
    fit_edcf,
    jacobian_edcf,
    levenberg_marquardt,
    lm_step,
    residuals_edcf,
    rmse,
)


def _random_params(rng, n):
    logits = rng.uniform(*ft.LOGIT_RANGE, size=n - 1)
    logb = rng.uniform(*ft.LOG_B_RANGE, size=n)
    return np.concatenate([logits, logb])


def _fd_jacobian(params, grid, order, h=1e-6):
    cols = []
    zero = np.zeros(len(grid))
    for k in range(len(params)):
        e = np.zeros(len(params))
        e[k] = h
        up = residuals_edcf(params + e, grid, order, zero)
        dn = residuals_edcf(params - e, grid, order, zero)
        cols.append((up - dn) / (2 * h))
    return np.array(cols).T


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_jacobian_matches_finite_differences(n, rng):
    grid = canonical_grid(64).values[::4]
    for _ in range(25):
        p = _random_params(rng, n)
        ja = jacobian_edcf(p, grid, 64)
        jf = _fd_jacobian(p, grid, 64)
        assert np.max(np.abs(ja - jf) / (1 + np.abs(jf))) < 1e-6


def test_jacobian_single_term_by_hand():
    g = np.array([0.0, 0.5, 2.0, 7.0])
    b = 0.8
    jac = jacobian_edcf(np.array([math.log(b)]), g, 16)
    # d/dc with b = exp(c) adds the chain factor b
    np.testing.assert_allclose(jac[:, 0], 4 * g * math.exp(0) * np.exp(-b * g) * b, rtol=1e-14)


def test_jacobian_empty_grid():
    jac = jacobian_edcf(np.zeros(3), np.array([]), 4)
    assert jac.shape == (0, 3)


def test_pack_unpack_round_trip():
    a = np.array([0.2, 0.3, 0.5])
    b = np.array([2.0, 0.4, 0.01])
    a2, b2 = ft.unpack(ft.pack(a, b), 3)
    np.testing.assert_allclose(a2, a, rtol=1e-14)
    np.testing.assert_allclose(b2, b, rtol=1e-14)
    assert math.fsum(a2) == pytest.approx(1.0, abs=1e-15)


def test_unpack_shape_check():
    with pytest.raises(DomainError):
        ft.unpack(np.zeros(4), 2)


# -- lm_step -------------------------------------------------------------------


def test_lm_step_zero_residual():
    np.testing.assert_array_equal(lm_step(np.zeros(5), np.ones((5, 2)), 1e-3), np.zeros(2))


def test_lm_step_linear_gauss_newton():
    p, c = 0.3, 2.5
    delta = lm_step(np.array([p - c]), np.array([[1.0]]), 1e-14)
    assert delta[0] == pytest.approx(c - p, rel=1e-12)


def test_lm_step_formula(rng):
    J = rng.normal(size=(12, 3))
    r = rng.normal(size=12)
    lam = 0.7
    jtj = J.T @ J
    expected = np.linalg.solve(jtj + lam * np.diag(np.diag(jtj)), -J.T @ r)
    np.testing.assert_allclose(lm_step(r, J, lam), expected, rtol=1e-12)


def test_lm_step_singular():
    J = np.array([[1.0, 0.0], [2.0, 0.0]])
    with pytest.raises(NumericalError):
        lm_step(np.array([1.0, 1.0]), J, 1e-3)


@pytest.mark.parametrize("damping", [0.0, -1.0, float("nan")])
def test_lm_step_bad_damping(damping):
    with pytest.raises(DomainError):
        lm_step(np.ones(2), np.eye(2), damping)


# -- levenberg_marquardt ----------------------------------------------------------


def test_lm_linear_least_squares(rng):
    A = rng.normal(size=(20, 4))
    y = rng.normal(size=20)
    res = levenberg_marquardt(lambda x: A @ x - y, lambda x: A, np.zeros(4))
    x_star = np.linalg.lstsq(A, y, rcond=None)[0]
    assert res.converged and res.iterations <= 50
    np.testing.assert_allclose(res.x, x_star, atol=1e-9)


def test_lm_quadratic_toy():
    # r = (x0^2 + x1 - 3, x0 - x1 + 1) vanishes at (1, 2)
    fun = lambda x: np.array([x[0] ** 2 + x[1] - 3, x[0] - x[1] + 1])
    jac = lambda x: np.array([[2 * x[0], 1.0], [1.0, -1.0]])
    res = levenberg_marquardt(fun, jac, np.array([2.0, 2.5]), gradient_tolerance=1e-10)
    assert res.converged and res.iterations <= 50
    np.testing.assert_allclose(res.x, [1.0, 2.0], atol=1e-9)


# -- fit_edcf ------------------------------------------------------------------


@pytest.mark.parametrize(
    "a, b",
    [([0.3, 0.7], [1.2, 0.15]), ([0.6, 0.4], [0.05, 0.004]), ([0.25, 0.75], [3.0, 0.6])],
)
def test_two_term_recovery(a, b):
    truth = EdcfModel(16, a, b)
    grid = SnrGrid(np.geomspace(1e-2, 3e3, 200))
    ref = MiCurve(grid, eval_edcf(truth, grid.values), 16)
    res = fit_edcf(ref, FitConfig(n_terms=2, grid=grid))
    np.testing.assert_allclose(res.model.a, truth.a, rtol=1e-6)
    np.testing.assert_allclose(res.model.b, truth.b, rtol=1e-6)
    assert res.achieved_rmse < 1e-10


def test_fit_invariants_and_determinism(canonical_curves):
    ref = canonical_curves[16]
    cfg = FitConfig(n_terms=2, grid=ref.snr, multistarts=16, seed=5)
    r1 = fit_edcf(ref, cfg)
    r2 = fit_edcf(ref, cfg)
    assert r1 == r2
    assert abs(r1.achieved_rmse - rmse(r1.model, ref)) <= 1e-12
    assert r1.model.reported_rmse == r1.achieved_rmse
    assert abs(math.fsum(r1.model.a) - 1) < 1e-15
    assert all(x > 0 for x in r1.model.a + r1.model.b)
    trace = np.array(r1.best_rmse_trace)
    assert len(trace) == r1.starts_evaluated == 16
    assert np.all(np.diff(trace) <= 0)


def test_fit_thread_independent(canonical_curves, monkeypatch):
    ref = canonical_curves[4]
    cfg = FitConfig(n_terms=2, grid=ref.snr, multistarts=12, seed=3)
    monkeypatch.setenv("MIQ_THREADS", "1")
    serial = fit_edcf(ref, cfg)
    monkeypatch.setenv("MIQ_THREADS", "4")
    assert fit_edcf(ref, cfg) == serial


def test_initial_points():
    pts = ft.initial_points(3, 64, 1)
    assert pts.shape == (64, 5)
    assert np.all(pts[:, :2] >= -2) and np.all(pts[:, :2] <= 2)
    assert np.all(pts[:, 2:] >= ft.LOG_B_RANGE[0]) and np.all(pts[:, 2:] <= ft.LOG_B_RANGE[1])
    # one point per stratum in every coordinate
    for k in range(5):
        lo, hi = (ft.LOGIT_RANGE if k < 2 else ft.LOG_B_RANGE)
        strata = np.floor((pts[:, k] - lo) / (hi - lo) * 64).astype(int)
        assert sorted(strata) == list(range(64))
    np.testing.assert_array_equal(pts, ft.initial_points(3, 64, 1))
    assert not np.array_equal(pts, ft.initial_points(3, 64, 2))


def test_identifiability_floor():
    with pytest.raises(ConfigError):
        FitConfig(n_terms=3, grid=SnrGrid([1.0, 2.0, 3.0, 4.0, 5.0, 6.0]))
    grid = SnrGrid([1.0, 2.0, 3.0, 4.0])
    with pytest.raises(ConfigError):
        fit_edcf(MiCurve(grid, [0.5, 0.8, 1.0, 1.2], 4), FitConfig(n_terms=2))


@pytest.mark.parametrize(
    "kwargs",
    [{"n_terms": 0}, {"multistarts": 0}, {"gradient_tolerance": 0}, {"step_tolerance": -1}, {"max_lm_iterations": 0}],
)
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        FitConfig(**kwargs)


def test_grid_mismatch(canonical_curves):
    with pytest.raises(ConfigError):
        fit_edcf(canonical_curves[4], FitConfig(n_terms=1, grid=canonical_grid(16)))


def test_report_fields(canonical_curves):
    res = fit_edcf(canonical_curves[4], FitConfig(n_terms=1, multistarts=4))
    rep = res.report()
    for key in ("achieved_rmse", "iterations_used", "starts_evaluated", "converged"):
        assert key in rep
    assert rep["n_terms"] == 1 and res.model.a == (1.0,)

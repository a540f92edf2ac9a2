"""Outcome regression on the eigenbasis: ridge, GCV, and logistic fits."""

import numpy as np
import pytest

from mftp.fgrid import TimeGrid, from_arrays
from mftp.fpca import KRule, fit_fpca
from mftp.outcome import (OutcomeModel, _irls_logistic, _ridge_path_fit,
                          fit_outcome, predict_from_scores, predict_m,
                          predict_m_batch)


def _linear_dataset(n=200, T=40, seed=0, noise=0.3):
    grid = TimeGrid.uniform(T)
    rng = np.random.default_rng(seed)
    curves = (2.0 + np.outer(rng.normal(0, 1.5, n), np.sin(2 * np.pi * grid.points))
              + np.outer(rng.normal(size=n), np.cos(2 * np.pi * grid.points)))
    x = rng.normal(size=(n, 2))
    w = grid.quad_weights
    y = curves @ (w * grid.points) + x @ np.array([1.0, -0.5]) \
        + noise * rng.standard_normal(n)
    return grid, from_arrays(grid, curves, x, y)


def test_pinned_ridge_matches_direct_solve():
    rng = np.random.default_rng(7)
    n, d = 120, 5
    Z = rng.normal(size=(n, d))
    y = 1.0 + Z @ np.array([0.5, -1.0, 0.0, 2.0, 0.3]) + rng.normal(0, 0.5, n)
    X = np.column_stack([np.ones(n), Z])
    lam = 3.7
    coef, lam_out = _ridge_path_fit(X, y, lam)
    Zc = Z - Z.mean(axis=0)
    b = np.linalg.solve(Zc.T @ Zc + lam * np.eye(d), Zc.T @ (y - y.mean()))
    b0 = y.mean() - Z.mean(axis=0) @ b
    assert lam_out == lam
    assert np.allclose(coef, np.concatenate([[b0], b]), atol=1e-10)


def test_residuals_sum_to_zero_with_unpenalized_intercept():
    rng = np.random.default_rng(1)
    X = np.column_stack([np.ones(80), rng.normal(size=(80, 3))])
    y = rng.normal(size=80)
    coef, _ = _ridge_path_fit(X, y, 10.0)
    assert np.isclose(np.sum(y - X @ coef), 0.0, atol=1e-9)


def test_gcv_recovers_true_linear_model():
    grid, data = _linear_dataset(n=400, noise=0.1)
    model = fit_fpca(data, KRule.fixed(2))
    fit = fit_outcome(data, model, K_m=2)
    preds = predict_m_batch(fit, data.covariate_matrix(), data.curves())
    resid = data.outcomes() - preds
    assert np.std(resid) < 0.15  # near the noise floor


def test_logistic_matches_penalized_objective_minimum():
    rng = np.random.default_rng(7)
    n, d = 150, 4
    Z = rng.normal(size=(n, d))
    X = np.column_stack([np.ones(n), Z])
    eta = 0.3 + Z @ np.array([1.0, -0.5, 0.2, 0.8])
    y = (rng.random(n) < 1.0 / (1.0 + np.exp(-eta))).astype(float)
    lam = 0.5
    coef = _irls_logistic(X, y, lam)
    pen = np.full(d + 1, lam)
    pen[0] = 0.0

    def objective(c):
        e = X @ c
        return np.sum(np.logaddexp(0.0, e) - y * e) + 0.5 * np.sum(pen * c ** 2)

    base = objective(coef)
    for _ in range(50):
        assert objective(coef + rng.normal(0, 1e-3, d + 1)) >= base - 1e-10


def test_binary_link_defaults_and_probability_range():
    grid, data = _linear_dataset(n=300)
    y = (data.outcomes() > np.median(data.outcomes())).astype(float)
    bdata = from_arrays(grid, data.curves(), data.covariate_matrix(), y)
    assert bdata.outcome_kind == "binary"
    model = fit_fpca(bdata, KRule.fixed(2))
    fit = fit_outcome(bdata, model)
    assert fit.link == "logit"
    preds = predict_m_batch(fit, bdata.covariate_matrix(), bdata.curves())
    assert np.all((preds > 0) & (preds < 1))


def test_predict_m_scalar_matches_batch():
    grid, data = _linear_dataset()
    model = fit_fpca(data, KRule.fixed(2))
    fit = fit_outcome(data, model, K_m=2)
    x0 = data.covariate_matrix()[3]
    a0 = data.curves()[3]
    single = predict_m(fit, x0, a0)
    batch = predict_m_batch(fit, data.covariate_matrix(), data.curves())
    assert np.isclose(single, batch[3])


def test_predict_from_scores_consistent_with_curves():
    from mftp.fpca import project_scores
    grid, data = _linear_dataset()
    model = fit_fpca(data, KRule.fixed(2))
    fit = fit_outcome(data, model, K_m=2)
    scores = project_scores(model, data.curves(), n_components=2).scores
    via_scores = predict_from_scores(fit, data.covariate_matrix(), scores)
    via_curves = predict_m_batch(fit, data.covariate_matrix(), data.curves())
    assert np.allclose(via_scores, via_curves, atol=1e-10)


def test_lipschitz_constant_formula():
    grid, data = _linear_dataset()
    model = fit_fpca(data, KRule.fixed(2))
    fit = fit_outcome(data, model, K_m=2)
    b = fit.coefficients[1:3]
    expected = np.sqrt(np.sum(b ** 2 / model.eigenvalues[:2]))
    assert np.isclose(fit.lipschitz_constant(), expected)


def test_small_n_warns_but_fits():
    grid, data = _linear_dataset(n=200)
    model = fit_fpca(data, KRule.fixed(2))
    small = data.subset(range(5))
    with pytest.warns(UserWarning):
        fit_outcome(small, model, K_m=2)


def test_km_bounds_checked():
    grid, data = _linear_dataset()
    model = fit_fpca(data, KRule.fixed(2))
    with pytest.raises(Exception):
        fit_outcome(data, model, K_m=model.n_components + 1)

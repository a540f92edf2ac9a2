"""Point estimators, cross-fitting, and the bootstrap."""

import numpy as np
import pytest

from mftp.estimators import (MftpEstimate, PipelineConfig, _aipw_contributions,
                             _precompute, aipw_with_nuisances, bootstrap_ci,
                             estimate_aipw, estimate_all, estimate_ipw,
                             estimate_or)
from mftp.fgrid import TimeGrid, from_arrays
from mftp.fpca import KRule, fit_fpca
from mftp.outcome import fit_outcome
from mftp.policy import ModificationPolicy
from mftp.weights import build_augmented, fit_weight_model


def _make_data(n=120, T=30, seed=0, p=2):
    grid = TimeGrid.uniform(T)
    rng = np.random.default_rng(seed)
    curves = (1.0 + np.outer(rng.normal(0, 1.2, n), np.sin(2 * np.pi * grid.points))
              + np.outer(rng.normal(0, 0.6, n), np.cos(2 * np.pi * grid.points)))
    x = rng.normal(size=(n, p))
    w = grid.quad_weights
    y = curves @ (w * (1.0 + grid.points)) + x[:, 0] + 0.5 * rng.standard_normal(n)
    return from_arrays(grid, curves, x, y)


def test_aipw_with_nuisances_formula():
    y = np.array([1.0, 2.0, 3.0])
    m_obs = np.array([0.5, 2.5, 2.0])
    m_shift = np.array([1.5, 1.0, 4.0])
    e = np.array([1.0, 2.0, 0.5])
    expected = np.mean(m_shift + (y - m_obs) * e)
    assert aipw_with_nuisances(y, m_obs, m_shift, e) == expected


def test_identity_policy_all_estimators_return_sample_mean():
    data = _make_data()
    model = fit_fpca(data, KRule.fixed(2))
    policy = ModificationPolicy.identity()
    config = PipelineConfig(K=2)
    ests = estimate_all(data, model, policy, config, seed=0)
    ybar = data.outcomes().mean()
    for name, est in ests.items():
        assert abs(est.point - ybar) < 1e-6, name


def test_or_estimator_wrapper_matches_pipeline():
    data = _make_data()
    model = fit_fpca(data, KRule.fixed(2))
    policy = ModificationPolicy.scale_warp(0.9)
    outcome = fit_outcome(data, model, K_m=2)
    est = estimate_or(data, model, policy, outcome)
    ests = estimate_all(data, model, policy, PipelineConfig(K=2, K_m=2), seed=0)
    assert np.isclose(est.point, ests["OR"].point, atol=1e-10)


def test_ipw_hajek_is_scale_invariant_in_outcome_shift():
    # Hajek weights sum to n, so adding a constant c to y adds exactly c
    data = _make_data()
    model = fit_fpca(data, KRule.fixed(2))
    policy = ModificationPolicy.scale_warp(0.9)
    aug = build_augmented(data, model, policy, K=2)
    wm = fit_weight_model(aug)
    est1 = estimate_ipw(data, wm)
    shifted = from_arrays(data.grid, data.curves(), data.covariate_matrix(),
                          data.outcomes() + 10.0)
    est2 = estimate_ipw(shifted, wm)
    assert np.isclose(est2.point - est1.point, 10.0, atol=1e-9)


def test_aipw_unbiased_with_true_nuisances_on_gaussian_toy():
    # one-component curves, linear truth: the oracle-nuisance AIPW average
    # must land within Monte Carlo error of the closed-form estimand
    rng = np.random.default_rng(21)
    n = 40000
    delta = 0.4
    xi = rng.standard_normal(n)
    y = 2.0 + 1.5 * xi + rng.standard_normal(n)
    m_obs = 2.0 + 1.5 * xi
    m_shift = 2.0 + 1.5 * (xi + delta)
    e = np.exp(delta * xi - delta ** 2 / 2.0)
    point = aipw_with_nuisances(y, m_obs, m_shift, e)
    assert abs(point - (2.0 + 1.5 * delta)) < 4.0 / np.sqrt(n) * 3.0


def test_cross_fitting_handles_duplicate_bootstrap_rows():
    data = _make_data(n=80)
    model = fit_fpca(data, KRule.fixed(2))
    policy = ModificationPolicy.scale_warp(0.9)
    config = PipelineConfig(K=2)
    arr = _precompute(data, model, policy, config)
    rng = np.random.default_rng(0)
    idx = rng.integers(0, 80, size=80)  # resample with repeats
    contrib = _aipw_contributions(arr, idx, config, seed=1)
    assert contrib.shape == (80,)
    assert np.all(np.isfinite(contrib))


def test_aipw_seed_controls_fold_split_deterministically():
    data = _make_data()
    model = fit_fpca(data, KRule.fixed(2))
    policy = ModificationPolicy.scale_warp(0.8)
    a = estimate_aipw(data, model, policy, K=2, seed=5)
    b = estimate_aipw(data, model, policy, K=2, seed=5)
    c = estimate_aipw(data, model, policy, K=2, seed=6)
    assert a.point == b.point
    assert a.point != c.point  # different folds move the point slightly


def test_bootstrap_ci_is_deterministic_and_ordered():
    data = _make_data()
    model = fit_fpca(data, KRule.fixed(2))
    policy = ModificationPolicy.scale_warp(0.9)
    config = PipelineConfig(K=2)
    lo1, hi1 = bootstrap_ci(data, model, policy, "OR", config, B=100, seed=3)
    lo2, hi2 = bootstrap_ci(data, model, policy, "OR", config, B=100, seed=3)
    assert (lo1, hi1) == (lo2, hi2)
    assert lo1 < hi1


def test_bootstrap_ci_covers_the_point_estimate_typically():
    data = _make_data()
    model = fit_fpca(data, KRule.fixed(2))
    policy = ModificationPolicy.scale_warp(0.9)
    config = PipelineConfig(K=2)
    ests = estimate_all(data, model, policy, config, seed=0)
    lo, hi = bootstrap_ci(data, model, policy, "AIPW", config, B=150, seed=0)
    assert lo < ests["AIPW"].point < hi


def test_bootstrap_refit_fpca_path_runs():
    data = _make_data(n=60)
    model = fit_fpca(data, KRule.fixed(2))
    policy = ModificationPolicy.scale_warp(0.9)
    config = PipelineConfig(K=2, refit_fpca_in_bootstrap=True)
    lo, hi = bootstrap_ci(data, model, policy, "OR", config, B=100, seed=0)
    assert lo < hi


def test_bootstrap_rejects_small_b():
    data = _make_data(n=60)
    model = fit_fpca(data, KRule.fixed(2))
    with pytest.raises(ValueError):
        bootstrap_ci(data, model, ModificationPolicy.identity(), "OR",
                     PipelineConfig(K=2), B=50)


def test_pipeline_config_fold_bounds():
    with pytest.raises(ValueError):
        PipelineConfig(folds=1)
    with pytest.raises(ValueError):
        PipelineConfig(folds=11)


def test_plugin_variance_diagnostic_present_and_positive():
    data = _make_data()
    model = fit_fpca(data, KRule.fixed(2))
    est = estimate_aipw(data, model, ModificationPolicy.scale_warp(0.9), K=2)
    assert est.diagnostics["plugin_variance"] > 0
    assert np.isclose(est.diagnostics["plugin_se"],
                      np.sqrt(est.diagnostics["plugin_variance"]))


def test_unknown_estimator_name_rejected():
    data = _make_data(n=60)
    model = fit_fpca(data, KRule.fixed(2))
    with pytest.raises(ValueError):
        bootstrap_ci(data, model, ModificationPolicy.identity(), "TMLE",
                     PipelineConfig(K=2), B=100)

"""Density-ratio weights from the balanced classification trick."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mftp.fgrid import TimeGrid, from_arrays
from mftp.fpca import KRule, fit_fpca
from mftp.outcome import FitError
from mftp.policy import ModificationPolicy
from mftp.weights import (HARD_CAP, AugmentedDataset, balance_diagnostics,
                          build_augmented, cap_and_normalize,
                          effective_sample_size, evaluate_weights,
                          fit_weight_model)


def _gaussian_shift_setup(n=5000, delta=0.3, seed=123):
    """Curves with a single N(0,1) score; the policy adds delta in score units.

    The true density ratio at observed score s is exp(delta*s - delta^2/2).
    """
    grid = TimeGrid.uniform(60)
    t = grid.points
    psi = np.sqrt(2) * np.sin(2 * np.pi * t)
    rng = np.random.default_rng(seed)
    xi = rng.standard_normal(n)
    curves = 1.0 + np.outer(xi, psi)
    data = from_arrays(grid, curves, rng.normal(size=(n, 1)), rng.normal(size=n))
    model = fit_fpca(data, KRule.fixed(1))
    sd = float(np.sqrt(model.eigenvalues[0]))

    def shift(x, values, g):
        return values + delta * sd * model.eigenfunctions[0]

    return data, model, shift, delta


def test_identity_policy_gives_unit_weights_exactly():
    grid = TimeGrid.uniform(30)
    rng = np.random.default_rng(4)
    curves = rng.normal(size=(150, 30)) + np.sin(2 * np.pi * grid.points)
    data = from_arrays(grid, curves, rng.normal(size=(150, 3)), rng.normal(size=150))
    model = fit_fpca(data, KRule.fixed(2))
    aug = build_augmented(data, model, ModificationPolicy.identity(), K=2)
    wm = fit_weight_model(aug)
    # duplicated rows with balanced labels leave the zero coefficient vector
    # at a stationary point, so the odds are exactly one everywhere
    assert np.array_equal(wm.fitted_weights, np.ones(150))
    assert np.all(wm.coefficients == 0.0)


def test_gaussian_shift_recovers_log_linear_ratio():
    data, model, shift, delta = _gaussian_shift_setup()
    aug = build_augmented(data, model, shift, K=1)
    wm = fit_weight_model(aug)
    n = data.n
    s = aug.scores[:n, 0]
    logw = np.log(np.maximum(evaluate_weights(wm, aug.covariates[:n],
                                              aug.scores[:n]), 1e-300))
    keep = logw > np.log(1e-200)
    slope, intercept = np.polyfit(s[keep], logw[keep], 1)
    assert abs(slope - delta) < 0.05
    assert abs(intercept + delta ** 2 / 2.0) < 0.05


def test_weights_shift_balance_toward_target():
    data, model, shift, delta = _gaussian_shift_setup()
    aug = build_augmented(data, model, shift, K=1)
    wm = fit_weight_model(aug)
    rep = balance_diagnostics(wm, aug)
    assert abs(rep.smd_unweighted[0]) > 0.25      # raw score gap ~ delta
    assert abs(rep.smd_weighted[0]) < 0.05        # mostly removed by weighting
    assert rep.ess < data.n


def test_augmented_dataset_validation():
    x = np.zeros((4, 2))
    s = np.zeros((4, 1))
    labels_bad = np.array([0.0, 1.0, 0.0, 1.0])
    with pytest.raises(ValueError):
        AugmentedDataset(covariates=x, scores=s, labels=labels_bad)
    x2 = x.copy()
    x2[3, 0] = 5.0
    with pytest.raises(ValueError):
        AugmentedDataset(covariates=x2, scores=s,
                         labels=np.array([0.0, 0.0, 1.0, 1.0]))


def test_fitted_weights_have_mean_one_and_respect_cap():
    data, model, shift, _ = _gaussian_shift_setup(n=800)
    aug = build_augmented(data, model, shift, K=1)
    wm = fit_weight_model(aug, cap_rule=1.5)
    assert np.isclose(wm.fitted_weights.mean(), 1.0)
    assert wm.truncation_cap == 1.5
    assert np.all(wm.capped_weights <= 1.5 + 1e-12)


def test_default_cap_is_percentile_bounded_by_hard_cap():
    data, model, shift, _ = _gaussian_shift_setup(n=800)
    aug = build_augmented(data, model, shift, K=1)
    wm = fit_weight_model(aug)
    assert wm.truncation_cap <= HARD_CAP


@given(st.integers(0, 2 ** 31 - 1), st.floats(1.1, 20.0))
@settings(max_examples=30, deadline=None)
def test_cap_and_normalize_is_idempotent_with_mean_one(seed, cap):
    # caps near or below 1 make mean-one renormalization ill-posed; the
    # default cap (99th percentile of raw weights) stays well above that
    rng = np.random.default_rng(seed)
    w = rng.gamma(2.0, 1.0, size=100)
    out = cap_and_normalize(w, cap)
    assert np.isclose(out.mean(), 1.0, atol=1e-8)
    again = cap_and_normalize(out, cap)
    assert np.allclose(out, again, atol=1e-8)


def test_cap_and_normalize_rejects_collapsed_weights():
    with pytest.raises(FitError):
        cap_and_normalize(np.zeros(5), 2.0)


def test_effective_sample_size_bounds():
    assert np.isclose(effective_sample_size(np.ones(50)), 50.0)
    w = np.zeros(50)
    w[0] = 1.0
    assert np.isclose(effective_sample_size(w), 1.0)


def test_k_larger_than_model_rejected():
    grid = TimeGrid.uniform(20)
    rng = np.random.default_rng(0)
    curves = rng.normal(size=(60, 20))
    data = from_arrays(grid, curves, rng.normal(size=(60, 2)), rng.normal(size=60))
    model = fit_fpca(data, KRule.fixed(3))
    with pytest.raises(ValueError):
        build_augmented(data, model, ModificationPolicy.identity(),
                        K=model.n_components + 1)

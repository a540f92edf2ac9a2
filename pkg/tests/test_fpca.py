"""Eigenanalysis of curve samples: spectrum, scores, reconstruction, decay."""

import numpy as np
import pytest

from mftp.fgrid import TimeGrid, from_arrays, inner_product
from mftp.fpca import (EIGEN_FLOOR_ABS, DecayReport, FpcaModel, KRule,
                       InsufficientDataError, decay_diagnostic, fit_fpca,
                       load_fpca, project_scores, reconstruct, save_fpca,
                       tail_residual)
from mftp.simgen import GPKernel, sample_gp


def _rank2_dataset(n=300, T=50, seed=42):
    grid = TimeGrid.uniform(T)
    t = grid.points
    f1 = np.sqrt(2) * np.sin(2 * np.pi * t)
    f2 = np.sqrt(2) * np.cos(2 * np.pi * t)
    rng = np.random.default_rng(seed)
    s1 = rng.normal(0, 2.0, size=n)
    s2 = rng.normal(0, 1.0, size=n)
    curves = 1.5 + np.outer(s1, f1) + np.outer(s2, f2)
    return grid, from_arrays(grid, curves, np.zeros((n, 1)), np.zeros(n))


def test_rank2_spectrum_matches_independent_oracle():
    # frozen eigenvalues from projecting the same draws onto a Gram-Schmidt
    # orthonormalization of the two generating functions
    _, data = _rank2_dataset()
    model = fit_fpca(data, KRule.fixed(2))
    assert model.n_components == 2
    assert np.allclose(model.eigenvalues, [3.45164119, 1.02890814], atol=1e-6)


def test_eigenfunctions_orthonormal_in_quadrature_metric():
    grid, data = _rank2_dataset()
    model = fit_fpca(data)
    for i in range(model.n_components):
        for j in range(model.n_components):
            ip = inner_product(model.eigenfunctions[i], model.eigenfunctions[j], grid)
            assert np.isclose(ip, 1.0 if i == j else 0.0, atol=1e-10)


def test_sign_convention_nonnegative_weighted_sum():
    grid, data = _rank2_dataset()
    model = fit_fpca(data)
    w = grid.quad_weights
    for psi in model.eigenfunctions:
        assert np.sum(w * psi) >= 0


def test_scores_standardized_unit_variance():
    _, data = _rank2_dataset(n=500)
    model = fit_fpca(data, KRule.fixed(2))
    scores = project_scores(model, data.curves()).scores
    # covariance divisor n, so the biased variance of the scores is exactly 1
    assert np.allclose(scores.var(axis=0, ddof=0), 1.0, atol=1e-8)
    assert np.allclose(scores.mean(axis=0), 0.0, atol=1e-10)


def test_reconstruction_is_near_exact_for_finite_rank():
    _, data = _rank2_dataset()
    model = fit_fpca(data, KRule.fixed(2))
    scores = project_scores(model, data.curves()).scores
    rebuilt = np.vstack([reconstruct(model, s) for s in scores[:10]])
    assert np.allclose(rebuilt, data.curves()[:10], atol=1e-10)


def test_fve_rule_picks_smallest_sufficient_k():
    _, data = _rank2_dataset()
    model = fit_fpca(data, KRule.fve(0.75))
    # first component carries ~77% of the variance here
    assert model.K == 1
    model = fit_fpca(data, KRule.fve(0.99))
    assert model.K == 2


def test_tail_residual_telescopes():
    _, data = _rank2_dataset()
    model = fit_fpca(data)
    total = model.total_variance()
    assert np.isclose(tail_residual(model, 0), total)
    assert np.isclose(tail_residual(model, 1), total - model.eigenvalues[0])
    assert tail_residual(model, model.n_components) == 0.0
    with pytest.raises(ValueError):
        tail_residual(model, model.n_components + 1)


def test_eigen_floor_drops_noise_components():
    _, data = _rank2_dataset()
    model = fit_fpca(data)
    assert model.n_components == 2  # rank-2 data: everything else is floored
    assert np.all(model.eigenvalues > EIGEN_FLOOR_ABS)


def test_projection_dimension_errors():
    _, data = _rank2_dataset()
    model = fit_fpca(data, KRule.fixed(2))
    with pytest.raises(Exception):
        project_scores(model, data.curves(), n_components=5)
    with pytest.raises(InsufficientDataError):
        fit_fpca(data.subset([0]))


def test_save_load_round_trip(tmp_path):
    grid = TimeGrid.from_raw(np.linspace(240, 1440, 60))
    rng = np.random.default_rng(3)
    curves = rng.normal(size=(40, 60)) + np.sin(grid.points * 6)
    data = from_arrays(grid, curves, np.zeros((40, 1)), np.zeros(40))
    model = fit_fpca(data, KRule.fixed(3))
    save_fpca(model, str(tmp_path / "bundle"))
    back = load_fpca(str(tmp_path / "bundle"))
    assert back.K == model.K
    assert back.grid.raw_lo == 240.0 and back.grid.raw_hi == 1440.0
    assert np.allclose(back.grid.points, model.grid.points)
    assert np.allclose(back.mean_fn, model.mean_fn)
    assert np.allclose(back.eigenvalues, model.eigenvalues)
    assert np.allclose(back.eigenfunctions, model.eigenfunctions)


def test_decay_diagnostic_prefers_exponential_for_smooth_kernel():
    grid = TimeGrid.uniform(100)
    kernel = GPKernel("squared_exponential", sigma_a=0.05)
    curves = sample_gp(kernel, grid, 2000, seed=11)
    data = from_arrays(grid, curves, np.zeros((2000, 1)), np.zeros(2000))
    model = fit_fpca(data, KRule.fve(0.999))
    report = decay_diagnostic(model)
    assert report.preferred == "exponential"
    assert report.exp_slope < 0


def test_decay_diagnostic_requires_enough_components():
    _, data = _rank2_dataset()
    model = fit_fpca(data)
    with pytest.raises(InsufficientDataError):
        decay_diagnostic(model)

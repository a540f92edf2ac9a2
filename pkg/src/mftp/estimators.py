"""Outcome-regression, weighting, and cross-fitted doubly robust estimators
of the mean potential outcome under a treatment modification policy, with
nonparametric bootstrap confidence intervals.

All estimators operate on standardized FPCA scores of the observed and
policy-shifted curves computed on the observed-treatment basis. By default
the bootstrap reuses that basis and refits only the nuisance models; the
basis can be refit per resample through the config.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from .fgrid import Dataset
from .fpca import FpcaModel, KRule, fit_fpca, project_scores, tail_residual
from .outcome import (FitError, OutcomeModel, _irls_logistic, _ridge_path_fit,
                      fit_outcome, predict_m_batch)
from .policy import PolicyLike, apply_policy_dataset
from .weights import (HARD_CAP, AugmentedDataset, WeightModel, build_augmented,
                      cap_and_normalize, effective_sample_size, fit_weight_model)


class UndefinedEstimateError(ArithmeticError):
    pass


@dataclass(frozen=True)
class MftpEstimate:
    """Point estimate of the mean outcome under the modification policy."""

    estimator: str  # OR | IPW_hajek | IPW_plain | AIPW
    point: float
    ci: Optional[Tuple[float, float]] = None
    alpha: Optional[float] = None
    n: int = 0
    K: int = 0
    K_m: int = 0
    folds: int = 0
    bootstrap_B: int = 0
    diagnostics: Dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class PipelineConfig:
    """Shared knobs for the estimation pipeline."""

    K: int = 4
    K_m: Optional[int] = None          # None: use the FPCA model's K
    folds: int = 3
    lambda_rule: Union[None, float, str] = None
    link: Optional[str] = None
    quadratic_weights: bool = False
    cap_rule: Optional[float] = None
    refit_fpca_in_bootstrap: bool = False
    refit_fpca_k_rule: Optional[KRule] = None

    def __post_init__(self):
        if not 2 <= self.folds <= 10:
            raise ValueError("folds must be between 2 and 10")


# ---------------------------------------------------------------------------
# Array-level core: everything below works on plain arrays so the bootstrap
# can resample rows without touching curves again.

@dataclass(frozen=True)
class _Arrays:
    y: np.ndarray
    x: np.ndarray
    s_obs: np.ndarray    # n x J_need standardized observed scores
    s_shift: np.ndarray  # n x J_need scores of the policy-shifted curves
    link: str
    K: int
    K_m: int
    tail: float          # eigenvalue tail beyond K


def _precompute(data: Dataset, model: FpcaModel, policy: PolicyLike,
                config: PipelineConfig) -> _Arrays:
    K_m = config.K_m if config.K_m is not None else model.K
    K_m = max(1, min(K_m, model.n_components))
    K = min(config.K, model.n_components)
    need = max(K, K_m)
    s_obs = project_scores(model, data.curves(), n_components=need).scores
    shifted = apply_policy_dataset(policy, data)
    s_shift = project_scores(model, shifted, n_components=need).scores
    link = config.link or ("logit" if data.outcome_kind == "binary" else "identity")
    return _Arrays(y=data.outcomes(), x=data.covariate_matrix(),
                   s_obs=s_obs, s_shift=s_shift, link=link, K=K, K_m=K_m,
                   tail=tail_residual(model, K))


def _fit_mean(arr: _Arrays, idx: np.ndarray,
              lambda_rule: Union[None, float, str]) -> Tuple[np.ndarray, float]:
    design = np.column_stack([np.ones(idx.size), arr.s_obs[idx, :arr.K_m],
                              arr.x[idx]])
    y = arr.y[idx]
    if arr.link == "identity":
        lam = None if (lambda_rule is None or lambda_rule == "gcv") else float(lambda_rule)
        return _ridge_path_fit(design, y, lam)
    lam = 1e-6 if (lambda_rule is None or lambda_rule == "gcv") else float(lambda_rule)
    return _irls_logistic(design, y, lam), lam


def _predict_mean(arr: _Arrays, coef: np.ndarray, idx: np.ndarray,
                  shifted: bool) -> np.ndarray:
    s = arr.s_shift if shifted else arr.s_obs
    design = np.column_stack([np.ones(idx.size), s[idx, :arr.K_m], arr.x[idx]])
    eta = design @ coef
    if arr.link == "logit":
        return 1.0 / (1.0 + np.exp(-eta))
    return eta


def _fit_weights(arr: _Arrays, idx: np.ndarray, config: PipelineConfig,
                 coef0: Optional[np.ndarray] = None) -> Tuple[np.ndarray, float]:
    """Classifier coefficients and cap, fit on the augmented rows of ``idx``."""
    from .weights import _default_features, CLASSIFIER_RIDGE
    x2 = np.vstack([arr.x[idx], arr.x[idx]])
    s2 = np.vstack([arr.s_obs[idx, :arr.K], arr.s_shift[idx, :arr.K]])
    design = _default_features(x2, s2, config.quadratic_weights)
    z = np.concatenate([np.zeros(idx.size), np.ones(idx.size)])
    coef = _irls_logistic(design, z, CLASSIFIER_RIDGE, coef0=coef0)
    n = idx.size
    raw = np.exp(np.clip(design[:n] @ coef, -700, 700))
    if config.cap_rule is None:
        cap = float(min(np.percentile(raw, 99), HARD_CAP))
    else:
        cap = float(config.cap_rule)
    return coef, max(cap, 1e-12)


def _weights_at(arr: _Arrays, coef: np.ndarray, cap: float, idx: np.ndarray,
                quadratic: bool) -> np.ndarray:
    from .weights import _default_features
    design = _default_features(arr.x[idx], arr.s_obs[idx, :arr.K], quadratic)
    raw = np.exp(np.clip(design @ coef, -700, 700))
    return np.minimum(raw, cap)


def _or_point(arr: _Arrays, idx: np.ndarray, config: PipelineConfig) -> float:
    coef, _ = _fit_mean(arr, idx, config.lambda_rule)
    return float(_predict_mean(arr, coef, idx, shifted=True).mean())


def _ipw_point(arr: _Arrays, idx: np.ndarray, config: PipelineConfig,
               mode: str = "hajek") -> float:
    coef, cap = _fit_weights(arr, idx, config)
    w = _weights_at(arr, coef, cap, idx, config.quadratic_weights)
    y = arr.y[idx]
    if mode == "hajek":
        w = cap_and_normalize(w, cap)
        total = w.sum()
        if total <= 0:
            raise UndefinedEstimateError("sum of weights is zero")
        return float(np.sum(w * y) / total)
    if mode == "plain":
        return float(np.mean(w * y))
    raise ValueError(f"unknown IPW mode {mode!r}")


def _aipw_contributions(arr: _Arrays, idx: np.ndarray, config: PipelineConfig,
                        seed: int) -> np.ndarray:
    """Per-subject cross-fitted contributions, in the order of ``idx``.

    Folds are formed over positions in ``idx`` so bootstrap resamples with
    repeated rows partition correctly.
    """
    m = idx.size
    rng = np.random.default_rng(seed)
    parts = np.array_split(rng.permutation(m), config.folds)
    contrib = np.empty(m)
    for part in parts:
        mask = np.ones(m, dtype=bool)
        mask[part] = False
        comp_rows = idx[mask]
        fold_rows = idx[part]
        if comp_rows.size < 2 or fold_rows.size == 0:
            raise FitError("fold too small for nuisance fitting")
        try:
            m_coef, _ = _fit_mean(arr, comp_rows, config.lambda_rule)
            w_coef, cap = _fit_weights(arr, comp_rows, config)
        except FitError as exc:
            raise FitError(f"nuisance fit failed on a fold complement: {exc}") from exc
        m_shift = _predict_mean(arr, m_coef, fold_rows, shifted=True)
        m_obs = _predict_mean(arr, m_coef, fold_rows, shifted=False)
        e = _weights_at(arr, w_coef, cap, fold_rows, config.quadratic_weights)
        contrib[part] = m_shift + (arr.y[fold_rows] - m_obs) * e
    return contrib


def _aipw_point(arr: _Arrays, idx: np.ndarray, config: PipelineConfig,
                seed: int) -> float:
    return float(_aipw_contributions(arr, idx, config, seed).mean())


# ---------------------------------------------------------------------------
# Public API

def aipw_with_nuisances(y: np.ndarray, m_obs: np.ndarray, m_shift: np.ndarray,
                        e: np.ndarray) -> float:
    """Doubly robust average with externally supplied nuisance values."""
    return float(np.mean(m_shift + (np.asarray(y) - m_obs) * e))


def estimate_or(data: Dataset, fpca: FpcaModel, policy: PolicyLike,
                outcome_model: OutcomeModel) -> MftpEstimate:
    """Mean of outcome-model predictions at the policy-shifted curves."""
    shifted = apply_policy_dataset(policy, data)
    preds = predict_m_batch(outcome_model, data.covariate_matrix(), shifted)
    return MftpEstimate(estimator="OR", point=float(preds.mean()), n=data.n,
                        K_m=outcome_model.K_m,
                        diagnostics={"tail_residual": tail_residual(fpca, fpca.K)})


def estimate_ipw(data: Dataset, weight_model: WeightModel,
                 mode: str = "hajek") -> MftpEstimate:
    """Weighted mean of outcomes; Hajek normalizes by the weight sum."""
    y = data.outcomes()
    if mode == "hajek":
        w = weight_model.fitted_weights
        total = w.sum()
        if total <= 0:
            raise UndefinedEstimateError("sum of weights is zero")
        point = float(np.sum(w * y) / total)
    elif mode == "plain":
        point = float(np.mean(weight_model.capped_weights * y))
    else:
        raise ValueError(f"unknown IPW mode {mode!r}")
    w = weight_model.fitted_weights
    return MftpEstimate(
        estimator=f"IPW_{mode}", point=point, n=data.n, K=weight_model.K,
        diagnostics={
            "weight_min": float(w.min()), "weight_max": float(w.max()),
            "ess": effective_sample_size(w),
            "cap_hits": float(weight_model.cap_hits),
        })


def estimate_aipw(data: Dataset, fpca: FpcaModel, policy: PolicyLike,
                  K: int, folds: int = 3, seed: int = 0,
                  config: Optional[PipelineConfig] = None) -> MftpEstimate:
    """Cross-fitted augmented estimator with plug-in variance diagnostic."""
    if config is None:
        config = PipelineConfig(K=K, folds=folds)
    else:
        config = replace(config, K=K, folds=folds)
    arr = _precompute(data, fpca, policy, config)
    idx = np.arange(data.n)
    contrib = _aipw_contributions(arr, idx, config, seed)
    point = float(contrib.mean())
    var_plugin = float(contrib.var(ddof=1) / data.n)
    return MftpEstimate(
        estimator="AIPW", point=point, n=data.n, K=arr.K, K_m=arr.K_m,
        folds=config.folds,
        diagnostics={"tail_residual": arr.tail,
                     "plugin_variance": var_plugin,
                     "plugin_se": float(np.sqrt(var_plugin))})


def estimate_all(data: Dataset, fpca: FpcaModel, policy: PolicyLike,
                 config: PipelineConfig, seed: int = 0) -> Dict[str, MftpEstimate]:
    """OR, Hajek IPW, and AIPW from one set of precomputed scores."""
    arr = _precompute(data, fpca, policy, config)
    idx = np.arange(data.n)
    out: Dict[str, MftpEstimate] = {}

    or_point = _or_point(arr, idx, config)
    out["OR"] = MftpEstimate(estimator="OR", point=or_point, n=data.n,
                             K_m=arr.K_m, diagnostics={"tail_residual": arr.tail})

    w_coef, cap = _fit_weights(arr, idx, config)
    w = _weights_at(arr, w_coef, cap, idx, config.quadratic_weights)
    w_norm = cap_and_normalize(w, cap)
    total = w_norm.sum()
    if total <= 0:
        raise UndefinedEstimateError("sum of weights is zero")
    out["IPW_hajek"] = MftpEstimate(
        estimator="IPW_hajek", point=float(np.sum(w_norm * arr.y) / total),
        n=data.n, K=arr.K,
        diagnostics={"weight_min": float(w_norm.min()),
                     "weight_max": float(w_norm.max()),
                     "ess": effective_sample_size(w_norm)})

    contrib = _aipw_contributions(arr, idx, config, seed)
    var_plugin = float(contrib.var(ddof=1) / data.n)
    out["AIPW"] = MftpEstimate(
        estimator="AIPW", point=float(contrib.mean()), n=data.n, K=arr.K,
        K_m=arr.K_m, folds=config.folds,
        diagnostics={"tail_residual": arr.tail,
                     "plugin_variance": var_plugin,
                     "plugin_se": float(np.sqrt(var_plugin))})
    return out


def bootstrap_ci(data: Dataset, fpca: FpcaModel, policy: PolicyLike,
                 estimator: str, config: PipelineConfig,
                 B: int = 500, alpha: float = 0.05, seed: int = 0) -> Tuple[float, float]:
    """Percentile bootstrap interval from B subject-level resamples.

    Default path reuses the observed-treatment basis and refits only the
    nuisance models per resample; set ``refit_fpca_in_bootstrap`` to refit
    the basis as well. Degenerate resamples are skipped and counted; more
    than 5% skips raises a warning.
    """
    if B < 100:
        raise ValueError("bootstrap needs B >= 100")
    rng = np.random.default_rng(seed)
    n = data.n
    idx_matrix = rng.integers(0, n, size=(B, n))
    arr = None if config.refit_fpca_in_bootstrap else _precompute(data, fpca, policy, config)
    points: List[float] = []
    skipped = 0
    for b in range(B):
        idx = idx_matrix[b]
        try:
            if config.refit_fpca_in_bootstrap:
                sub = data.subset(idx)
                curves = sub.curves()
                if np.all(curves == curves[0]):
                    skipped += 1
                    continue
                k_rule = config.refit_fpca_k_rule or KRule.fixed(fpca.K)
                model_b = fit_fpca(sub, k_rule)
                arr_b = _precompute(sub, model_b, policy, config)
                points.append(_dispatch(arr_b, np.arange(n), config, estimator, seed=b))
            else:
                points.append(_dispatch(arr, idx, config, estimator, seed=b))
        except (FitError, UndefinedEstimateError, np.linalg.LinAlgError):
            skipped += 1
    if skipped > 0.05 * B:
        warnings.warn(f"bootstrap skipped {skipped}/{B} degenerate resamples; "
                      "interval may be unreliable")
    if not points:
        raise UndefinedEstimateError("all bootstrap resamples failed")
    lo, hi = np.quantile(points, [alpha / 2.0, 1.0 - alpha / 2.0])
    return float(lo), float(hi)


def _dispatch(arr: _Arrays, idx: np.ndarray, config: PipelineConfig,
              estimator: str, seed: int) -> float:
    if estimator == "OR":
        return _or_point(arr, idx, config)
    if estimator == "IPW_hajek":
        return _ipw_point(arr, idx, config, mode="hajek")
    if estimator == "IPW_plain":
        return _ipw_point(arr, idx, config, mode="plain")
    if estimator == "AIPW":
        return _aipw_point(arr, idx, config, seed)
    raise ValueError(f"unknown estimator {estimator!r}")

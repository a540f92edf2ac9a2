"""Density-ratio weights via the augmented-dataset classification trick.

Observed score rows (label 0) and policy-shifted score rows (label 1) are
stacked with duplicated covariates; because the classes are balanced by
construction, the density ratio at an observed point equals the fitted odds
p/(1-p). Weights are capped and renormalized to mean one.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .fgrid import Dataset
from .fpca import FpcaModel, project_scores
from .outcome import FitError, _irls_logistic
from .policy import PolicyLike, shifted_scores

HARD_CAP = 50.0
SEPARATION_BOUND = 30.0
# absolute (sample-size independent) ridge on the classifier coefficients:
# strong enough to tame weight variance in small samples, asymptotically
# negligible as the log-likelihood grows with n
CLASSIFIER_RIDGE = 0.5


@dataclass(frozen=True)
class AugmentedDataset:
    """2n rows of (covariates, K scores, pseudo-treatment label)."""

    covariates: np.ndarray  # 2n x p
    scores: np.ndarray      # 2n x K
    labels: np.ndarray      # 2n, first n zeros then n ones

    def __post_init__(self):
        n2 = self.labels.size
        if n2 % 2 or self.covariates.shape[0] != n2 or self.scores.shape[0] != n2:
            raise ValueError("augmented dataset must have 2n aligned rows")
        n = n2 // 2
        if not (np.all(self.labels[:n] == 0) and np.all(self.labels[n:] == 1)):
            raise ValueError("labels must be n zeros followed by n ones")
        if not np.array_equal(self.covariates[:n], self.covariates[n:]):
            raise ValueError("covariates must be duplicated across the two halves")

    @property
    def n(self) -> int:
        return self.labels.size // 2

    @property
    def K(self) -> int:
        return self.scores.shape[1]


@dataclass(frozen=True)
class WeightModel:
    """Fitted classifier plus capped, mean-one weights for the fitting data."""

    coefficients: np.ndarray
    K: int
    truncation_cap: float
    fitted_weights: np.ndarray   # capped and renormalized to mean one
    capped_weights: np.ndarray   # capped only (plain-average estimation)
    quadratic_features: bool
    cap_hits: int
    separation_flag: bool


def build_augmented(
    data: Dataset,
    model: FpcaModel,
    policy: PolicyLike,
    K: int,
) -> AugmentedDataset:
    """Stack observed and policy-shifted scores with duplicated covariates."""
    if K > model.n_components:
        raise ValueError(f"K={K} exceeds retained components {model.n_components}")
    obs = project_scores(model, data.curves(), n_components=K).scores
    shf = shifted_scores(policy, model, data, n_components=K).scores
    x = data.covariate_matrix()
    return AugmentedDataset(
        covariates=np.vstack([x, x]),
        scores=np.vstack([obs, shf]),
        labels=np.concatenate([np.zeros(data.n), np.ones(data.n)]),
    )


def _default_features(x: np.ndarray, scores: np.ndarray,
                      quadratic: bool = False) -> np.ndarray:
    feats = [np.ones(x.shape[0]), scores, x]
    if quadratic:
        both = np.column_stack([scores, x])
        feats.append(both ** 2)
        d = both.shape[1]
        iu, ju = np.triu_indices(d, k=1)
        feats.append(both[:, iu] * both[:, ju])
    return np.column_stack(feats)


def cap_and_normalize(w: np.ndarray, cap: float) -> np.ndarray:
    """Capped weights rescaled to mean one without breaching the cap.

    Returns min(c * min(w, cap), cap) with the scalar c solving mean = 1,
    which is the fixed point of alternately clipping and renormalizing. When
    the cap is below one that mean is unreachable, so the capped weights are
    scaled by a single factor instead.
    """
    wc = np.minimum(np.asarray(w, dtype=float), cap)
    mean = wc.mean()
    if mean <= 0:
        raise FitError("weights collapsed to zero during capping")
    if cap < 1.0:
        return wc / mean
    if mean >= 1.0:
        return wc / mean  # c = 1/mean <= 1 never re-breaches the cap
    # c > 1: mean(min(c*wc, cap)) is piecewise linear and increasing in c;
    # between consecutive breakpoints cap/v the solution is linear, so scan
    v = np.sort(wc[wc > 0])[::-1]
    n = wc.size
    running = float(v.sum())
    capped_sum = 0.0
    for i, vi in enumerate(v):
        c_break = cap / vi
        mean_at_break = (capped_sum + c_break * running) / n
        if mean_at_break >= 1.0:
            c = (n - capped_sum) / running
            return np.minimum(c * wc, cap)
        capped_sum += cap
        running -= float(vi)
    # every positive weight hits the cap before the mean reaches one
    return np.minimum(wc * (cap / v[-1]), cap) if v.size else wc


def fit_weight_model(
    aug: AugmentedDataset,
    feature_map: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None,
    cap_rule: Optional[float] = None,
    quadratic: bool = False,
) -> WeightModel:
    """Logistic regression of the pseudo-treatment on (covariates, scores).

    ``cap_rule``: explicit cap, or None for the 99th percentile of the
    uncapped weights with a hard fallback cap of 50.
    """
    if feature_map is None:
        design = _default_features(aug.covariates, aug.scores, quadratic)
    else:
        design = feature_map(aug.covariates, aug.scores)
    y = aug.labels.astype(float)
    if y.min() == y.max():
        raise FitError("both classes required to fit the weight model")
    coef = _irls_logistic(design, y, CLASSIFIER_RIDGE)

    separation = bool(np.max(np.abs(coef[1:])) > SEPARATION_BOUND)
    if separation:
        warnings.warn("possible perfect separation in the weight classifier; "
                      "weights will be capped")

    n = aug.n
    eta_obs = design[:n] @ coef
    raw = np.exp(np.clip(eta_obs, -700, 700))  # odds = density ratio (balanced classes)
    if cap_rule is None:
        cap = float(min(np.percentile(raw, 99), HARD_CAP))
    else:
        cap = float(cap_rule)
    cap = max(cap, 1e-12)
    cap_hits = int(np.sum(raw > cap))
    capped = np.minimum(raw, cap)
    weights = cap_and_normalize(raw, cap)
    return WeightModel(coefficients=coef, K=aug.K, truncation_cap=cap,
                       fitted_weights=weights, capped_weights=capped,
                       quadratic_features=quadratic,
                       cap_hits=cap_hits, separation_flag=separation)


def evaluate_weights(
    model: WeightModel,
    covariates: np.ndarray,
    scores: np.ndarray,
) -> np.ndarray:
    """Capped (not renormalized) density-ratio weights at new points."""
    design = _default_features(np.atleast_2d(covariates), np.atleast_2d(scores),
                               model.quadratic_features)
    raw = np.exp(np.clip(design @ model.coefficients, -700, 700))
    return np.minimum(raw, model.truncation_cap)


def effective_sample_size(weights: np.ndarray) -> float:
    w = np.asarray(weights, dtype=float)
    return float(w.sum() ** 2 / np.sum(w ** 2))


@dataclass(frozen=True)
class BalanceReport:
    """Standardized mean differences before/after weighting, plus ESS."""

    feature_names: list
    smd_unweighted: np.ndarray
    smd_weighted: np.ndarray
    ess: float


def balance_diagnostics(weight_model: WeightModel, aug: AugmentedDataset) -> BalanceReport:
    """SMD of every feature: weighted observed half vs unweighted shifted half."""
    n = aug.n
    feats = np.column_stack([aug.scores, aug.covariates])
    names = [f"score_{j + 1}" for j in range(aug.K)] + \
            [f"x_{j + 1}" for j in range(aug.covariates.shape[1])]
    obs, shf = feats[:n], feats[n:]
    w = weight_model.fitted_weights
    pooled_sd = np.sqrt((obs.var(axis=0) + shf.var(axis=0)) / 2.0)
    denom = np.where(pooled_sd > 0, pooled_sd, 1.0)
    smd_un = (obs.mean(axis=0) - shf.mean(axis=0)) / denom
    w_mean = (w[:, None] * obs).sum(axis=0) / w.sum()
    smd_w = (w_mean - shf.mean(axis=0)) / denom
    return BalanceReport(feature_names=names, smd_unweighted=smd_un,
                         smd_weighted=smd_w, ess=effective_sample_size(w))

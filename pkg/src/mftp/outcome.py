"""Scalar-on-function outcome regression on the FPCA eigenbasis.

The regression design is [intercept, standardized scores (first K_m), scalar
covariates]. The intercept is unpenalized; score and covariate blocks share a
ridge penalty chosen by GCV over a fixed log-grid unless pinned. Binary
outcomes use ridge-penalized logistic regression fit by iteratively
reweighted least squares with step halving.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .fgrid import Dataset, DimensionError
from .fpca import FpcaModel, project_scores

LAMBDA_GRID_SIZE = 25
LAMBDA_GRID_RANGE = (1e-6, 1e2)
IRLS_MAX_ITER = 100
IRLS_TOL = 1e-8


class FitError(RuntimeError):
    pass


@dataclass(frozen=True)
class OutcomeModel:
    """Fitted conditional-mean model m_hat(x, a(.))."""

    fpca_ref: FpcaModel
    K_m: int
    coefficients: np.ndarray  # intercept, K_m score terms, p covariate terms
    link: str                 # "identity" | "logit"
    ridge_lambda: float
    p: int

    def linear_predictor(self, scores: np.ndarray, x: np.ndarray) -> np.ndarray:
        scores = np.atleast_2d(scores)
        x = np.atleast_2d(x)
        design = np.column_stack([np.ones(scores.shape[0]), scores, x])
        return design @ self.coefficients

    def lipschitz_constant(self) -> float:
        """Bound on |m(x,a1)-m(x,a2)| / ||a1-a2|| for the identity link."""
        b = self.coefficients[1:1 + self.K_m]
        theta = self.fpca_ref.eigenvalues[:self.K_m]
        return float(np.sqrt(np.sum(b ** 2 / theta)))


def _design(data: Dataset, model: FpcaModel, K_m: int) -> np.ndarray:
    scores = project_scores(model, data.curves(), n_components=K_m).scores
    return np.column_stack([np.ones(data.n), scores, data.covariate_matrix()])


def _ridge_path_fit(design: np.ndarray, y: np.ndarray,
                    lam: Optional[float]) -> tuple:
    """Ridge with unpenalized intercept; GCV over the default grid if lam is None.

    Columns other than the intercept are centered so the intercept absorbs
    their means and stays unpenalized; the ridge solve then reduces to an SVD
    of the centered block, making the GCV sweep cheap.
    """
    n = design.shape[0]
    Z = design[:, 1:]
    z_mean = Z.mean(axis=0)
    Zc = Z - z_mean
    y_mean = y.mean()
    yc = y - y_mean
    u, s, vt = np.linalg.svd(Zc, full_matrices=False)
    uty = u.T @ yc

    if lam is None:
        gram_scale = float(np.sum(s ** 2)) / n
        lo, hi = LAMBDA_GRID_RANGE
        grid = np.geomspace(lo * gram_scale, hi * gram_scale, LAMBDA_GRID_SIZE) \
            if gram_scale > 0 else np.array([1e-8])
        best = (np.inf, grid[0])
        ss_yc = float(yc @ yc)
        for lam_try in grid:
            shrink = s ** 2 / (s ** 2 + lam_try)
            fit_ss = float(np.sum((shrink * uty) * ((2 - shrink) * uty)))
            rss = max(ss_yc - fit_ss, 0.0)
            df = float(np.sum(shrink)) + 1.0
            gcv = n * rss / (n - df) ** 2 if n > df else np.inf
            if gcv < best[0]:
                best = (gcv, lam_try)
        lam = float(best[1])

    coef_c = vt.T @ (s / (s ** 2 + lam) * uty)
    intercept = y_mean - float(z_mean @ coef_c)
    return np.concatenate([[intercept], coef_c]), lam


def _irls_logistic(design: np.ndarray, y: np.ndarray, lam: float,
                   coef0: Optional[np.ndarray] = None) -> np.ndarray:
    """Ridge-penalized logistic regression (intercept unpenalized)."""
    n, d = design.shape
    pen = np.full(d, lam)
    pen[0] = 0.0
    coef = np.zeros(d) if coef0 is None else coef0.copy()

    def pen_deviance(c):
        eta = design @ c
        # log(1 + exp(eta)) - y*eta, numerically stable
        ll = np.logaddexp(0.0, eta) - y * eta
        return float(ll.sum() + 0.5 * np.sum(pen * c ** 2))

    dev = pen_deviance(coef)
    for _ in range(IRLS_MAX_ITER):
        eta = design @ coef
        mu = 1.0 / (1.0 + np.exp(-eta))
        wvec = np.maximum(mu * (1.0 - mu), 1e-10)
        grad = design.T @ (mu - y) + pen * coef
        if np.max(np.abs(grad)) < IRLS_TOL:
            return coef
        hess = (design * wvec[:, None]).T @ design + np.diag(pen)
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError as exc:
            raise FitError("singular IRLS system") from exc
        # step halving on penalized-deviance increase
        alpha = 1.0
        for _ in range(30):
            new_coef = coef - alpha * step
            new_dev = pen_deviance(new_coef)
            if new_dev <= dev + 1e-12:
                break
            alpha /= 2.0
        change = float(np.max(np.abs(new_coef - coef)))
        coef, dev = new_coef, new_dev
        if change < IRLS_TOL:
            return coef
    warnings.warn("IRLS reached the iteration cap; returning last iterate")
    return coef


def fit_outcome(
    data: Dataset,
    model: FpcaModel,
    K_m: Optional[int] = None,
    lambda_rule: Union[None, float, str] = None,
    link: Optional[str] = None,
) -> OutcomeModel:
    """Fit the outcome regression on scores and covariates.

    ``lambda_rule``: None/"gcv" selects the penalty by GCV (identity link);
    a float pins it. ``link`` defaults from the dataset's outcome kind.
    """
    if K_m is None:
        K_m = model.K
    if K_m < 1 or K_m > model.n_components:
        raise DimensionError(f"K_m={K_m} outside [1, {model.n_components}]")
    if link is None:
        link = "logit" if data.outcome_kind == "binary" else "identity"
    p = data.p
    d = 1 + K_m + p
    if data.n <= d:
        warnings.warn(f"n={data.n} <= number of coefficients {d}; fit may be unstable")

    design = _design(data, model, K_m)
    y = data.outcomes()

    if link == "identity":
        lam = None if (lambda_rule is None or lambda_rule == "gcv") else float(lambda_rule)
        coef, lam = _ridge_path_fit(design, y, lam)
    elif link == "logit":
        lam = 1e-6 if (lambda_rule is None or lambda_rule == "gcv") else float(lambda_rule)
        coef = _irls_logistic(design, y, lam)
    else:
        raise ValueError(f"unknown link {link!r}")
    return OutcomeModel(fpca_ref=model, K_m=K_m, coefficients=coef,
                        link=link, ridge_lambda=float(lam), p=p)


def predict_m(model: OutcomeModel, x: np.ndarray, curve: np.ndarray) -> float:
    """Predicted mean outcome at one (covariates, curve) pair."""
    return float(predict_m_batch(model, np.atleast_2d(x), np.atleast_2d(curve))[0])


def predict_m_batch(model: OutcomeModel, x: np.ndarray, curves: np.ndarray) -> np.ndarray:
    """Vectorized predictions; rows of ``x`` pair with rows of ``curves``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    curves = np.atleast_2d(np.asarray(curves, dtype=float))
    if x.shape[1] != model.p:
        raise DimensionError(f"covariate length {x.shape[1]} != {model.p}")
    scores = project_scores(model.fpca_ref, curves, n_components=model.K_m).scores
    eta = model.linear_predictor(scores, x)
    if model.link == "logit":
        return 1.0 / (1.0 + np.exp(-eta))
    return eta


def predict_from_scores(model: OutcomeModel, x: np.ndarray, scores: np.ndarray) -> np.ndarray:
    """Predictions when standardized scores are already available."""
    eta = model.linear_predictor(np.atleast_2d(scores)[:, :model.K_m], x)
    if model.link == "logit":
        return 1.0 / (1.0 + np.exp(-eta))
    return eta

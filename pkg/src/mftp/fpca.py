"""Functional principal component analysis on a shared time grid.

The covariance operator is discretized with the quadrature weights of the
grid: eigenpairs of W^{1/2} C W^{1/2} are computed and eigenvectors are
back-transformed so the eigenfunctions are orthonormal in the quadrature
inner product (not the Euclidean one). Scores are standardized by sqrt of
the eigenvalue.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import List, Optional, Sequence, Union

import numpy as np

from .fgrid import Dataset, DimensionError, TimeGrid

EIGEN_FLOOR_ABS = 1e-10
EIGEN_FLOOR_REL = 1e-8


class InsufficientDataError(ValueError):
    pass


@dataclass(frozen=True)
class KRule:
    """Truncation rule: fixed K or smallest K with fraction of variance >= rho."""

    kind: str  # "fixed" | "fve"
    value: float

    @classmethod
    def fixed(cls, k: int) -> "KRule":
        return cls("fixed", int(k))

    @classmethod
    def fve(cls, rho: float = 0.95) -> "KRule":
        if not 0 < rho <= 1:
            raise ValueError("fve threshold must be in (0, 1]")
        return cls("fve", float(rho))


@dataclass(frozen=True)
class FpcaModel:
    """Mean function, spectrum, eigenfunctions and the chosen truncation."""

    grid: TimeGrid
    mean_fn: np.ndarray          # length T
    eigenvalues: np.ndarray      # length J, nonincreasing, > eigen floor
    eigenfunctions: np.ndarray   # J x T, rows orthonormal under quadrature
    K: int

    @property
    def n_components(self) -> int:
        return self.eigenvalues.size

    def total_variance(self) -> float:
        return float(self.eigenvalues.sum())


@dataclass(frozen=True)
class ScoreMatrix:
    """n x K matrix of standardized principal component scores."""

    scores: np.ndarray
    standardized: bool = True


def fit_fpca(data: Dataset, k_rule: Optional[KRule] = None) -> FpcaModel:
    """Estimate mean, eigenvalues and eigenfunctions from the sample curves.

    Covariance uses divisor n. Eigenpairs below the floor
    max(1e-10, 1e-8 * theta_1) are dropped so score standardization never
    divides by a near-zero sqrt eigenvalue.
    """
    if data.n < 2:
        raise InsufficientDataError("FPCA needs at least 2 curves")
    if k_rule is None:
        k_rule = KRule.fve(0.95)

    grid = data.grid
    curves = data.curves()
    mean_fn = curves.mean(axis=0)
    centered = curves - mean_fn

    w = grid.quad_weights
    sqrt_w = np.sqrt(w)
    cov = (centered.T @ centered) / data.n
    m = cov * np.outer(sqrt_w, sqrt_w)
    m = (m + m.T) / 2.0
    try:
        evals, evecs = np.linalg.eigh(m)
    except np.linalg.LinAlgError as exc:  # pragma: no cover
        raise ArithmeticError(
            f"eigensolver failed; matrix condition ~{np.linalg.cond(m):.3e}"
        ) from exc
    order = np.argsort(evals)[::-1]
    evals = evals[order]
    evecs = evecs[:, order]

    floor = max(EIGEN_FLOOR_ABS, EIGEN_FLOOR_REL * max(evals[0], 0.0))
    keep = evals > floor
    evals = evals[keep]
    evecs = evecs[:, keep]

    # back-transform: psi = W^{-1/2} u, unit norm in the quadrature metric
    psi = (evecs / sqrt_w[:, None]).T
    for j in range(psi.shape[0]):
        s = float(np.sum(w * psi[j]))
        if s < 0 or (s == 0 and _first_nonzero_sign(psi[j]) < 0):
            psi[j] = -psi[j]

    J = evals.size
    if k_rule.kind == "fixed":
        K = min(int(k_rule.value), J)
    else:
        if J == 0:
            K = 0
        else:
            frac = np.cumsum(evals) / evals.sum()
            K = int(np.searchsorted(frac, k_rule.value) + 1)
            K = min(K, J)
    return FpcaModel(grid=grid, mean_fn=mean_fn, eigenvalues=evals,
                     eigenfunctions=psi, K=K)


def _first_nonzero_sign(v: np.ndarray) -> float:
    nz = v[v != 0]
    return float(np.sign(nz[0])) if nz.size else 1.0


def project_scores(
    model: FpcaModel,
    curves: Union[np.ndarray, Sequence[np.ndarray]],
    n_components: Optional[int] = None,
) -> ScoreMatrix:
    """Standardized scores <curve - mean, psi_j> / sqrt(theta_j).

    ``n_components`` defaults to model.K; pass model.n_components for the
    full retained spectrum.
    """
    k = model.K if n_components is None else int(n_components)
    if k < 1:
        raise DimensionError("projection needs at least one retained component")
    if k > model.n_components:
        raise DimensionError(
            f"requested {k} components, model retains {model.n_components}"
        )
    curves = np.atleast_2d(np.asarray(curves, dtype=float))
    if curves.shape[1] != len(model.grid):
        raise DimensionError("curves do not match the model grid")
    w = model.grid.quad_weights
    centered = curves - model.mean_fn
    raw = centered @ (model.eigenfunctions[:k] * w).T
    return ScoreMatrix(scores=raw / np.sqrt(model.eigenvalues[:k]))


def reconstruct(model: FpcaModel, scores: np.ndarray) -> np.ndarray:
    """mean + sum_j sqrt(theta_j) * score_j * psi_j, truncated at len(scores)."""
    scores = np.asarray(scores, dtype=float).ravel()
    k = scores.size
    if k > model.n_components:
        raise DimensionError("more scores than retained components")
    return model.mean_fn + (np.sqrt(model.eigenvalues[:k]) * scores) @ model.eigenfunctions[:k]


def tail_residual(model: FpcaModel, K: int) -> float:
    """Sum of estimated eigenvalues beyond K."""
    if K < 0 or K > model.n_components:
        raise ValueError(f"K={K} out of range [0, {model.n_components}]")
    return float(model.eigenvalues[K:].sum())


@dataclass(frozen=True)
class DecayReport:
    """Which eigenvalue-tail decay law fits the estimated spectrum better."""

    preferred: str            # "exponential" | "polynomial" | "finite_rank"
    exp_slope: float
    exp_r2: float
    poly_slope: float
    poly_r2: float
    ks_used: np.ndarray


def _ls_line(x: np.ndarray, y: np.ndarray) -> tuple:
    slope, intercept = np.polyfit(x, y, 1)
    fitted = slope * x + intercept
    ss_res = float(np.sum((y - fitted) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(slope), r2


def decay_diagnostic(model: FpcaModel, max_k: int = 30) -> DecayReport:
    """Fit log tail vs K (exponential law) and log tail vs log K (polynomial).

    Only tails above a relative floor are used, so the sampling-noise plateau
    of the smallest eigenvalues does not dominate either fit.
    """
    J = model.n_components
    if J < 6:
        raise InsufficientDataError("decay diagnostic needs at least 6 components")
    total = model.total_variance()
    tails = np.array([tail_residual(model, k) for k in range(1, J)])
    ks = np.arange(1, J)
    ok = tails > max(1e-12, 1e-6 * total)
    ks, tails = ks[ok], tails[ok]
    ks, tails = ks[:max_k], tails[:max_k]
    if ks.size < 4:
        return DecayReport("finite_rank", np.nan, np.nan, np.nan, np.nan, ks)
    log_t = np.log(tails)
    exp_slope, exp_r2 = _ls_line(ks.astype(float), log_t)
    poly_slope, poly_r2 = _ls_line(np.log(ks.astype(float)), log_t)
    preferred = "exponential" if exp_r2 >= poly_r2 else "polynomial"
    return DecayReport(preferred, exp_slope, exp_r2, poly_slope, poly_r2, ks)


# ---------------------------------------------------------------------------
# CSV bundle serialization (reuse across CLI invocations)

def save_fpca(model: FpcaModel, directory: str) -> None:
    """Write grid/mean/eigenvalues/eigenfunctions as a CSV bundle."""
    os.makedirs(directory, exist_ok=True)
    header = f"normalized_time,raw_lo={model.grid.raw_lo},raw_hi={model.grid.raw_hi}"
    np.savetxt(os.path.join(directory, "grid.csv"), model.grid.points,
               header=header, comments="# ")
    np.savetxt(os.path.join(directory, "mean.csv"), model.mean_fn)
    np.savetxt(os.path.join(directory, "eigenvalues.csv"),
               np.column_stack([model.eigenvalues]),
               header=f"K={model.K}", comments="# ")
    np.savetxt(os.path.join(directory, "eigenfunctions.csv"), model.eigenfunctions,
               delimiter=",")


def load_fpca(directory: str) -> FpcaModel:
    grid_path = os.path.join(directory, "grid.csv")
    with open(grid_path) as fh:
        first = fh.readline()
    raw_lo, raw_hi = 0.0, 1.0
    for token in first.replace("#", "").split(","):
        if "=" in token:
            key, val = token.split("=")
            if key.strip() == "raw_lo":
                raw_lo = float(val)
            elif key.strip() == "raw_hi":
                raw_hi = float(val)
    points = np.loadtxt(grid_path)
    grid = TimeGrid(points=points, raw_lo=raw_lo, raw_hi=raw_hi)
    mean_fn = np.loadtxt(os.path.join(directory, "mean.csv"))
    eig_path = os.path.join(directory, "eigenvalues.csv")
    with open(eig_path) as fh:
        first = fh.readline()
    K = int(first.replace("#", "").split("=")[1])
    eigenvalues = np.atleast_1d(np.loadtxt(eig_path))
    eigenfunctions = np.atleast_2d(np.loadtxt(
        os.path.join(directory, "eigenfunctions.csv"), delimiter=","))
    return FpcaModel(grid=grid, mean_fn=mean_fn, eigenvalues=eigenvalues,
                     eigenfunctions=eigenfunctions, K=K)

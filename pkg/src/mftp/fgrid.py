"""Functional-data primitives: time grids, quadrature, and dataset validation.

Curves are stored as vectors of values on a shared, strictly increasing time
grid. All inner products and norms are trapezoid-rule quadrature on the grid
normalized to [0, 1]; non-uniform grids are handled through the quadrature
weights rather than by resampling.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np


class DimensionError(ValueError):
    """Vector lengths incompatible with the grid or with each other."""


class ValidationError(ValueError):
    """Raw input rows violate dataset invariants."""

    def __init__(self, violations: List[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing time points, normalized to [0, 1].

    ``points`` holds the normalized times; ``raw_lo``/``raw_hi`` retain the
    original units so reports can map back. The normalization is affine.
    """

    points: np.ndarray
    raw_lo: float = 0.0
    raw_hi: float = 1.0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 1 or pts.size < 2:
            raise DimensionError("grid needs at least 2 points")
        if not np.all(np.diff(pts) > 0):
            raise ValidationError(["grid points must be strictly increasing"])
        if not np.all(np.isfinite(pts)):
            raise ValidationError(["grid points must be finite"])
        object.__setattr__(self, "points", pts)

    @classmethod
    def from_raw(cls, raw_points: Sequence[float]) -> "TimeGrid":
        raw = np.asarray(raw_points, dtype=float)
        if raw.ndim != 1 or raw.size < 2:
            raise DimensionError("grid needs at least 2 points")
        lo, hi = float(raw[0]), float(raw[-1])
        if hi <= lo:
            raise ValidationError(["grid must span a positive interval"])
        return cls(points=(raw - lo) / (hi - lo), raw_lo=lo, raw_hi=hi)

    @classmethod
    def uniform(cls, n_points: int) -> "TimeGrid":
        return cls(points=np.linspace(0.0, 1.0, n_points))

    def __len__(self) -> int:
        return self.points.size

    def to_raw(self, t: np.ndarray) -> np.ndarray:
        """Map normalized times back to original units."""
        return self.raw_lo + np.asarray(t) * (self.raw_hi - self.raw_lo)

    @property
    def quad_weights(self) -> np.ndarray:
        """Trapezoid quadrature weights on the normalized grid."""
        t = self.points
        w = np.empty_like(t)
        w[0] = (t[1] - t[0]) / 2.0
        w[-1] = (t[-1] - t[-2]) / 2.0
        w[1:-1] = (t[2:] - t[:-2]) / 2.0
        return w

    def same_as(self, other: "TimeGrid") -> bool:
        return len(self) == len(other) and np.array_equal(self.points, other.points)


@dataclass(frozen=True)
class FunctionalSample:
    """One subject: a treatment curve on a grid, scalar covariates, outcome."""

    grid: TimeGrid
    values: np.ndarray
    covariates: np.ndarray
    outcome: float

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        cov = np.asarray(self.covariates, dtype=float)
        if vals.size != len(self.grid):
            raise DimensionError(
                f"curve has {vals.size} values for a grid of length {len(self.grid)}"
            )
        if not np.all(np.isfinite(vals)):
            raise ValidationError(["curve values must be finite"])
        if not np.all(np.isfinite(cov)):
            raise ValidationError(["covariates must be finite"])
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "covariates", cov)
        object.__setattr__(self, "outcome", float(self.outcome))


@dataclass(frozen=True)
class Dataset:
    """A list of samples sharing one grid, plus the outcome type."""

    samples: List[FunctionalSample]
    outcome_kind: str = "continuous"  # or "binary"

    def __post_init__(self):
        if not self.samples:
            raise ValidationError(["dataset is empty"])
        g = self.samples[0].grid
        p = self.samples[0].covariates.size
        bad = [
            f"row {i}: grid differs from row 0"
            for i, s in enumerate(self.samples)
            if not s.grid.same_as(g)
        ]
        bad += [
            f"row {i}: covariate length {s.covariates.size} != {p}"
            for i, s in enumerate(self.samples)
            if s.covariates.size != p
        ]
        if bad:
            raise ValidationError(bad)
        if self.outcome_kind not in ("continuous", "binary"):
            raise ValidationError([f"unknown outcome_kind {self.outcome_kind!r}"])

    @property
    def grid(self) -> TimeGrid:
        return self.samples[0].grid

    @property
    def n(self) -> int:
        return len(self.samples)

    @property
    def p(self) -> int:
        return self.samples[0].covariates.size

    def curves(self) -> np.ndarray:
        """n x T matrix of curve values."""
        return np.vstack([s.values for s in self.samples])

    def covariate_matrix(self) -> np.ndarray:
        return np.vstack([s.covariates for s in self.samples])

    def outcomes(self) -> np.ndarray:
        return np.array([s.outcome for s in self.samples])

    def subset(self, idx: Sequence[int]) -> "Dataset":
        return Dataset([self.samples[i] for i in idx], self.outcome_kind)


def inner_product(f: np.ndarray, g: np.ndarray, grid: TimeGrid) -> float:
    """Trapezoid approximation of the L2 inner product on the grid."""
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if f.size != len(grid) or g.size != len(grid):
        raise DimensionError("inner_product: vector/grid length mismatch")
    return float(np.sum(grid.quad_weights * f * g))


def l2_norm(f: np.ndarray, grid: TimeGrid) -> float:
    return float(np.sqrt(max(inner_product(f, f, grid), 0.0)))


def l2_distance(f: np.ndarray, g: np.ndarray, grid: TimeGrid) -> float:
    """Quadrature L2 distance between two curves on the same grid."""
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if f.size != len(grid) or g.size != len(grid):
        raise DimensionError("l2_distance: vector/grid length mismatch")
    if np.array_equal(f, g):
        return 0.0
    return l2_norm(f - g, grid)


def detect_outcome_kind(y: np.ndarray) -> str:
    """binary iff every observed outcome is 0 or 1."""
    y = np.asarray(y, dtype=float)
    return "binary" if np.all(np.isin(y, (0.0, 1.0))) else "continuous"


def from_arrays(
    grid: TimeGrid,
    curves: np.ndarray,
    covariates: np.ndarray,
    outcomes: np.ndarray,
    outcome_kind: Optional[str] = None,
) -> Dataset:
    """Assemble a Dataset from matrices (one row per subject)."""
    curves = np.atleast_2d(np.asarray(curves, dtype=float))
    covariates = np.atleast_2d(np.asarray(covariates, dtype=float))
    outcomes = np.asarray(outcomes, dtype=float).ravel()
    if not (curves.shape[0] == covariates.shape[0] == outcomes.size):
        raise DimensionError("from_arrays: row counts differ")
    if outcome_kind is None:
        outcome_kind = detect_outcome_kind(outcomes)
    samples = [
        FunctionalSample(grid, curves[i], covariates[i], outcomes[i])
        for i in range(outcomes.size)
    ]
    return Dataset(samples, outcome_kind)


def validate_dataset(
    raw_rows: Sequence[dict],
    grid: TimeGrid,
    outcome_kind: Optional[str] = None,
) -> Dataset:
    """Build a Dataset from parsed rows, collecting all violations.

    Each row is a dict with keys ``values`` (curve), ``covariates`` and
    ``outcome``. Raises ValidationError naming every offending row/field.
    """
    violations: List[str] = []
    T = len(grid)
    p = None
    for i, row in enumerate(raw_rows):
        vals = np.asarray(row["values"], dtype=float)
        cov = np.asarray(row["covariates"], dtype=float)
        if vals.size != T:
            violations.append(f"row {i}: curve length {vals.size} != grid length {T}")
        if not np.all(np.isfinite(vals)):
            violations.append(f"row {i}: non-finite curve value")
        if p is None:
            p = cov.size
        elif cov.size != p:
            violations.append(f"row {i}: covariate length {cov.size} != {p}")
        if not np.all(np.isfinite(cov)):
            violations.append(f"row {i}: non-finite covariate")
        y = row["outcome"]
        if not np.isfinite(y):
            violations.append(f"row {i}: non-finite outcome")
    if violations:
        raise ValidationError(violations)
    samples = [
        FunctionalSample(grid, r["values"], r["covariates"], r["outcome"])
        for r in raw_rows
    ]
    if outcome_kind is None:
        outcome_kind = detect_outcome_kind(np.array([r["outcome"] for r in raw_rows]))
    return Dataset(samples, outcome_kind)

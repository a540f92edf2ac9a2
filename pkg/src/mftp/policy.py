"""Declarative treatment-modification policies and their application to curves.

Three kinds are shipped:

- ``identity``: no change.
- ``scale_warp``: value at normalized time t becomes tau * A(t**warp_exponent),
  with A evaluated by linear interpolation at the warped time.
- ``window_threshold``: inside the window(s), points with observed value below
  the threshold are multiplied by tau; optionally the whole curve is rescaled
  by a per-subject constant c_q so the quadrature integral of the curve is
  preserved.

Policies take the covariate vector in their signature so user extensions can
depend on it; the shipped kinds ignore it. ``apply_policy`` also accepts a
plain callable ``f(covariates, values, grid) -> values`` for in-process use.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np

from .fgrid import Dataset, FunctionalSample, TimeGrid, inner_product
from .fpca import FpcaModel, ScoreMatrix, project_scores

POLICY_KINDS = ("identity", "scale_warp", "window_threshold")


class RenormalizationError(ArithmeticError):
    """Integral of the pre-normalization modified curve is not positive."""


@dataclass(frozen=True)
class ModificationPolicy:
    """Description of a treatment modification rule q(x, a(.))."""

    kind: str
    tau: float = 1.0
    warp_exponent: float = 1.2
    windows: Tuple[Tuple[float, float], ...] = ((0.0, 1.0),)
    threshold: float = 0.0
    renormalize: bool = True

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if self.kind == "scale_warp":
            if self.tau <= 0 or self.warp_exponent <= 0:
                raise ValueError("scale_warp requires tau > 0 and warp_exponent > 0")
        if self.kind == "window_threshold":
            if self.tau <= 0:
                raise ValueError("window_threshold requires tau > 0")
            if not np.isfinite(self.threshold):
                raise ValueError("threshold must be finite")
            for lo, hi in self.windows:
                if not (0.0 <= lo < hi <= 1.0):
                    raise ValueError(f"window [{lo}, {hi}] not within [0, 1]")

    @classmethod
    def identity(cls) -> "ModificationPolicy":
        return cls(kind="identity")

    @classmethod
    def scale_warp(cls, tau: float, warp_exponent: float = 1.2) -> "ModificationPolicy":
        return cls(kind="scale_warp", tau=tau, warp_exponent=warp_exponent)

    @classmethod
    def window_threshold(
        cls,
        tau: float,
        threshold: float,
        window: Union[Tuple[float, float], Sequence[Tuple[float, float]]] = (0.0, 1.0),
        renormalize: bool = True,
    ) -> "ModificationPolicy":
        if window and np.isscalar(window[0]):
            windows = (tuple(window),)
        else:
            windows = tuple(tuple(wi) for wi in window)
        return cls(kind="window_threshold", tau=tau, threshold=threshold,
                   windows=windows, renormalize=renormalize)


PolicyLike = Union[ModificationPolicy, Callable[[np.ndarray, np.ndarray, TimeGrid], np.ndarray]]


def apply_policy(policy: PolicyLike, sample: FunctionalSample) -> np.ndarray:
    """Modified curve A^q on the same grid as the observed curve."""
    return apply_policy_values(policy, sample.covariates, sample.values, sample.grid)


def apply_policy_values(
    policy: PolicyLike,
    covariates: np.ndarray,
    values: np.ndarray,
    grid: TimeGrid,
) -> np.ndarray:
    if callable(policy) and not isinstance(policy, ModificationPolicy):
        return np.asarray(policy(covariates, values, grid), dtype=float)

    a = np.asarray(values, dtype=float)
    if policy.kind == "identity":
        return a.copy()

    if policy.kind == "scale_warp":
        warped_t = np.clip(grid.points ** policy.warp_exponent, 0.0, 1.0)
        return policy.tau * np.interp(warped_t, grid.points, a)

    # window_threshold: decide modification from the observed value
    modified = a.copy()
    in_window = np.zeros(a.size, dtype=bool)
    for lo, hi in policy.windows:
        in_window |= (grid.points >= lo) & (grid.points <= hi)
    scale_mask = in_window & (a < policy.threshold)
    modified[scale_mask] = policy.tau * a[scale_mask]
    if policy.renormalize:
        denom = inner_product(modified, np.ones_like(modified), grid)
        if denom <= 0:
            raise RenormalizationError(
                "integral of the modified curve is not positive; c_q undefined"
            )
        numer = inner_product(a, np.ones_like(a), grid)
        modified *= numer / denom
    return modified


def apply_policy_dataset(policy: PolicyLike, data: Dataset) -> np.ndarray:
    """n x T matrix of per-subject modified curves."""
    return np.vstack([apply_policy(policy, s) for s in data.samples])


def shifted_scores(
    policy: PolicyLike,
    model: FpcaModel,
    data: Dataset,
    n_components: Optional[int] = None,
) -> ScoreMatrix:
    """Scores of the policy-shifted curves on the observed-treatment basis."""
    shifted = apply_policy_dataset(policy, data)
    return project_scores(model, shifted, n_components=n_components)


def empirical_lipschitz(
    policy: PolicyLike,
    grid: TimeGrid,
    n_pairs: int = 200,
    seed: int = 0,
) -> float:
    """Largest observed ||q(a1)-q(a2)|| / ||a1-a2|| over random smooth pairs.

    Reported as a diagnostic for the Lipschitz requirement on modification
    rules; not a proof of a global constant.
    """
    rng = np.random.default_rng(seed)
    t = grid.points
    x0 = np.zeros(len(grid))
    ratios = []
    for _ in range(n_pairs):
        coef = rng.normal(size=(2, 4))
        basis = np.vstack([np.ones_like(t), t,
                           np.sin(2 * np.pi * t), np.cos(2 * np.pi * t)])
        a1, a2 = (coef @ basis) * 3.0
        d = np.sqrt(max(inner_product(a1 - a2, a1 - a2, grid), 1e-30))
        q1 = apply_policy_values(policy, x0, a1, grid)
        q2 = apply_policy_values(policy, x0, a2, grid)
        dq = np.sqrt(max(inner_product(q1 - q2, q1 - q2, grid), 0.0))
        ratios.append(dq / d)
    return float(np.max(ratios))

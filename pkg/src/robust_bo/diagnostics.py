"""Outlier classification against a robust model's predictive distribution."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm, t as student_t

from robust_bo.errors import ContractViolation, NumericalFailure
from robust_bo.gp import Dataset, Family
from robust_bo.laplace import StudentTGpModel, observation_predictive


@dataclass(frozen=True)
class FilterConfig:
    """Classification level and schedule.

    alpha is the tail mass per side; filtering first runs once ``n_init``
    points have been observed and then every ``n_s`` iterations.
    """

    alpha: float = 0.05
    n_init: int = 10
    n_s: int = 2

    def __post_init__(self):
        if not 0 < self.alpha < 0.5:
            raise ContractViolation(f"alpha must be in (0, 0.5), got {self.alpha}")
        if self.n_init < 1 or self.n_s < 1:
            raise ContractViolation("n_init and n_s must be >= 1")


@dataclass(frozen=True)
class ClassificationReport:
    inlier_mask: np.ndarray
    n_outliers: int
    reverted: bool
    scores: np.ndarray

    @property
    def outlier_mask(self) -> np.ndarray:
        return ~self.inlier_mask


def schedule_says_filter(iteration: int, cfg: FilterConfig) -> bool:
    """Whether the diagnostic runs when ``iteration`` points have been observed."""
    if iteration < 1:
        raise ContractViolation(f"iteration must be >= 1, got {iteration}")
    return iteration >= cfg.n_init and (iteration - cfg.n_init) % cfg.n_s == 0


def classify_outliers(
    data: Dataset, robust_model: StudentTGpModel, cfg: FilterConfig
) -> ClassificationReport:
    """Flag points outside the two-sided alpha tails of the observation predictive.

    Each point is scored by its standardized residual under the Student-t
    observation predictive at its own input; a point is an outlier when the
    score falls below the alpha quantile or above the 1 - alpha quantile.
    The mask is rebuilt from scratch on every call. If fewer than half of
    the points (floor) survive, or the robust fit did not converge, the
    report reverts to all-inliers.
    """
    n = len(data)
    all_in = np.ones(n, dtype=bool)
    if not robust_model.converged:
        return ClassificationReport(all_in, 0, True, np.full(n, np.nan))
    try:
        pred = observation_predictive(robust_model, data.X)
    except NumericalFailure:
        return ClassificationReport(all_in, 0, True, np.full(n, np.nan))

    scores = (data.y - pred.mean) / pred.scale
    if pred.family is Family.STUDENT_T:
        upper = student_t.ppf(1.0 - cfg.alpha, pred.dof)
    else:
        upper = norm.ppf(1.0 - cfg.alpha)
    inliers = np.abs(scores) <= upper
    if inliers.sum() < n // 2:
        return ClassificationReport(all_in, 0, True, scores)
    return ClassificationReport(inliers, int(n - inliers.sum()), False, scores)

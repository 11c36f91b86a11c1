"""Expected improvement (minimization) and its inner maximizer."""

from __future__ import annotations

from typing import Callable

import numpy as np
from scipy.stats import norm, t as student_t

from robust_bo.design import check_bounds, latin_hypercube
from robust_bo.errors import ContractViolation
from robust_bo.gp import Family, Predictive


def ei_gaussian(mean, std, y_star):
    """E[max(0, y_star - y)] for y ~ N(mean, std^2); exact for std == 0."""
    mean = np.asarray(mean, dtype=float)
    std = np.asarray(std, dtype=float)
    gap = y_star - mean
    with np.errstate(divide="ignore", invalid="ignore"):
        z = gap / std
        ei = gap * norm.cdf(z) + std * norm.pdf(z)
    ei = np.where(std > 0, ei, np.maximum(gap, 0.0))
    return np.maximum(ei, 0.0)


def ei_student_t(mean, scale, dof, y_star):
    """E[max(0, y_star - y)] for y ~ t_dof(mean, scale)."""
    if not dof > 1:
        raise ContractViolation(f"expected improvement needs dof > 1, got {dof}")
    mean = np.asarray(mean, dtype=float)
    scale = np.asarray(scale, dtype=float)
    gap = y_star - mean
    with np.errstate(divide="ignore", invalid="ignore"):
        z = gap / scale
        ei = gap * student_t.cdf(z, dof) + scale * (dof + z * z) / (dof - 1) * student_t.pdf(z, dof)
    ei = np.where(scale > 0, ei, np.maximum(gap, 0.0))
    return np.maximum(ei, 0.0)


def expected_improvement(pred: Predictive, y_star: float):
    if pred.family is Family.STUDENT_T:
        return ei_student_t(pred.mean, pred.scale, pred.dof, y_star)
    return ei_gaussian(pred.mean, pred.scale, y_star)


def maximize_acquisition(
    acq: Callable[[np.ndarray], np.ndarray],
    bounds,
    rng: np.random.Generator,
    n_candidates: int = 1000,
    n_starts: int = 5,
    n_sweeps: int = 20,
    shrink: float = 0.7,
) -> np.ndarray:
    """Maximize a vectorized acquisition over a box.

    Scores a Latin hypercube of ``n_candidates`` points, then refines the
    best ``n_starts`` by coordinate search: each sweep tries +/- one step
    along every axis, and the step (initially a tenth of the box width)
    shrinks by ``shrink`` after each sweep. The returned point scores at
    least as well as every raw candidate; ties go to the earliest found.
    """
    b = check_bounds(bounds)
    lo, hi = b[:, 0], b[:, 1]
    d = b.shape[0]
    cand = latin_hypercube(n_candidates, b, rng)
    scores = np.asarray(acq(cand), dtype=float)
    scores = np.where(np.isfinite(scores), scores, -np.inf)
    best_i = int(np.argmax(scores))
    best_x, best_v = cand[best_i].copy(), scores[best_i]

    k = min(n_starts, n_candidates)
    top = np.argsort(-scores, kind="stable")[:k]
    pts = cand[top].copy()
    vals = scores[top].copy()
    step = 0.1 * (hi - lo)
    for _ in range(n_sweeps):
        for j in range(d):
            trial = np.concatenate([pts, pts])
            trial[:k, j] += step[j]
            trial[k:, j] -= step[j]
            trial[:, j] = np.clip(trial[:, j], lo[j], hi[j])
            tv = np.asarray(acq(trial), dtype=float)
            tv = np.where(np.isfinite(tv), tv, -np.inf)
            up, down = tv[:k], tv[k:]
            move_up = (up > vals) & (up >= down)
            move_down = (down > vals) & ~move_up
            pts[move_up] = trial[:k][move_up]
            vals[move_up] = up[move_up]
            pts[move_down] = trial[k:][move_down]
            vals[move_down] = down[move_down]
        step = step * shrink
    i = int(np.argmax(vals))
    if vals[i] > best_v:
        best_x, best_v = pts[i].copy(), vals[i]
    return best_x


def propose(predict: Callable[[np.ndarray], Predictive], y_star: float, bounds,
            rng: np.random.Generator, **kwargs) -> np.ndarray:
    """Next evaluation point: the EI maximizer under ``predict``."""
    return maximize_acquisition(
        lambda Xq: expected_improvement(predict(Xq), y_star), bounds, rng, **kwargs
    )

"""Multi-start derivative-free maximization of a model-selection objective."""

from __future__ import annotations

import warnings
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize

from robust_bo.design import latin_hypercube
from robust_bo.errors import NumericalFailure


def log_box(input_range: np.ndarray, noise_box=(-12.0, 2.0)) -> np.ndarray:
    """Search box over [log l_1..log l_d, log signal variance, log noise]."""
    input_range = np.where(input_range > 0, input_range, 1.0)
    rows = [(np.log(0.01 * w), np.log(10.0 * w)) for w in input_range]
    rows.append((-6.0, 6.0))
    rows.append(noise_box)
    return np.array(rows, dtype=float)


def maximize(
    objective: Callable[[np.ndarray], float],
    starts: Sequence[np.ndarray],
    box: np.ndarray,
    n_restarts: int,
    rng: np.random.Generator,
    maxfev: int = 200,
) -> tuple[np.ndarray, float]:
    """Maximize ``objective`` over ``box`` with bounded Nelder-Mead runs.

    Runs start from every point in ``starts`` (clipped into the box) and from
    ``n_restarts`` Latin hypercube draws. Evaluations raising
    ``NumericalFailure`` or returning non-finite values count as -inf.
    Returns the best point and its objective value; ties keep the earliest.
    """

    def neg(theta):
        try:
            v = objective(theta)
        except NumericalFailure:
            return np.inf
        return -v if np.isfinite(v) else np.inf

    points = [np.clip(np.asarray(s, dtype=float), box[:, 0], box[:, 1]) for s in starts]
    if n_restarts > 0:
        points.extend(latin_hypercube(n_restarts, box, rng))

    best_theta, best_val = None, np.inf
    for x0 in points:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = minimize(
                neg,
                x0,
                method="Nelder-Mead",
                bounds=box,
                options={"maxfev": maxfev, "xatol": 1e-4, "fatol": 1e-6},
            )
        if res.fun < best_val:
            best_theta, best_val = np.array(res.x, dtype=float), res.fun
    if best_theta is None:
        raise NumericalFailure("every hyperparameter evaluation failed")
    return best_theta, -best_val

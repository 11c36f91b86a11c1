"""Exact Gaussian process regression with a Gaussian likelihood.

Zero prior mean, targets are used as given (no standardization).
Hyperparameters are chosen by maximizing the log marginal likelihood

    log p(y) = -1/2 y^T K^-1 y - 1/2 log|K| - t/2 log(2 pi)

with K = k(X, X) + noise_variance * I (+ jitter).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from robust_bo import _hyperopt
from robust_bo.errors import ContractViolation, InsufficientData
from robust_bo.kernels import (
    KernelParams,
    cross_kernel,
    gram_matrix,
    jittered_cholesky,
)

LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class Dataset:
    """Observations with an inlier mask; points are never removed, only masked."""

    X: np.ndarray
    y: np.ndarray
    inlier_mask: np.ndarray | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim == 1:
            self.X = self.X.reshape(-1, 1)
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        if self.X.shape[0] != self.y.size:
            raise ContractViolation(
                f"X has {self.X.shape[0]} rows but y has {self.y.size} entries"
            )
        if self.inlier_mask is None:
            self.inlier_mask = np.ones(self.y.size, dtype=bool)
        else:
            self.inlier_mask = np.asarray(self.inlier_mask, dtype=bool).reshape(-1)
            if self.inlier_mask.size != self.y.size:
                raise ContractViolation("inlier_mask must align with y")

    def __len__(self):
        return self.y.size

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    @property
    def n_inliers(self) -> int:
        return int(self.inlier_mask.sum())

    def masked(self) -> "Dataset":
        """The inlier-only view as a fresh all-inlier dataset."""
        m = self.inlier_mask
        return Dataset(self.X[m], self.y[m])

    def with_mask(self, mask) -> "Dataset":
        return Dataset(self.X, self.y, np.asarray(mask, dtype=bool).copy())

    def unmasked(self) -> "Dataset":
        return Dataset(self.X, self.y)

    def append(self, x, y: float) -> "Dataset":
        x = np.asarray(x, dtype=float).reshape(1, -1)
        return Dataset(
            np.vstack([self.X, x]),
            np.append(self.y, y),
            np.append(self.inlier_mask, True),
        )


class Family(str, Enum):
    GAUSSIAN = "gaussian"
    STUDENT_T = "student_t"


@dataclass(frozen=True)
class Predictive:
    """Predictive distribution at one or more query points.

    ``scale`` is the standard deviation for the Gaussian family and the scale
    parameter for the Student-t family; ``variance`` is derived from it.
    """

    mean: np.ndarray
    scale: np.ndarray
    family: Family = Family.GAUSSIAN
    dof: float = np.inf
    includes_noise: bool = False

    @classmethod
    def gaussian(cls, mean, variance, includes_noise=False) -> "Predictive":
        var = np.maximum(np.asarray(variance, dtype=float), 0.0)
        return cls(np.asarray(mean, dtype=float), np.sqrt(var), Family.GAUSSIAN,
                   np.inf, includes_noise)

    @classmethod
    def student_t(cls, loc, scale, dof, includes_noise=True) -> "Predictive":
        if not dof > 0:
            raise ContractViolation(f"dof must be positive, got {dof}")
        return cls(np.asarray(loc, dtype=float), np.asarray(scale, dtype=float),
                   Family.STUDENT_T, float(dof), includes_noise)

    @property
    def variance(self) -> np.ndarray:
        s2 = self.scale ** 2
        if self.family is Family.GAUSSIAN:
            return s2
        if self.dof <= 2:
            return np.full_like(s2, np.inf)
        return s2 * self.dof / (self.dof - 2.0)

    def __getitem__(self, idx) -> "Predictive":
        return Predictive(self.mean[idx], self.scale[idx], self.family, self.dof,
                          self.includes_noise)


@dataclass(frozen=True)
class GaussianGpModel:
    kernel: KernelParams
    noise_variance: float
    X: np.ndarray
    y: np.ndarray
    cholesky_factor: np.ndarray
    alpha_weights: np.ndarray
    log_evidence: float
    extra_jitter: float = 0.0
    training_view: Dataset | None = field(default=None, repr=False)

    def predict(self, Xq, with_noise: bool = False) -> Predictive:
        return predict_gaussian(self, Xq, with_noise)


def _factor(X, y, kernel: KernelParams, noise_variance: float):
    K = gram_matrix(X, kernel, noise_variance)
    L, extra = jittered_cholesky(K, kernel.signal_variance)
    alpha = cho_solve((L, True), y, check_finite=False)
    lml = (
        -0.5 * y @ alpha
        - np.sum(np.log(np.diag(L)))
        - 0.5 * y.size * LOG_2PI
    )
    return L, alpha, float(lml), extra


def log_marginal_likelihood(
    data: Dataset, kernel: KernelParams, noise_variance: float
) -> float:
    """Log marginal likelihood of the inliers of ``data``."""
    view = data.masked()
    if len(view) < 1:
        raise InsufficientData("need at least one inlier")
    return _factor(view.X, view.y, kernel, noise_variance)[2]


def pack(kernel: KernelParams, noise_variance: float) -> np.ndarray:
    return np.concatenate([
        np.log(kernel.lengthscales),
        [np.log(kernel.signal_variance), np.log(max(noise_variance, 1e-300))],
    ])


def unpack(theta: np.ndarray, template: KernelParams) -> tuple[KernelParams, float]:
    d = template.dim
    kernel = template._with_hypers(np.exp(theta[:d]), float(np.exp(theta[d])))
    return kernel, float(np.exp(theta[d + 1]))


def fit_gp_gaussian(
    data: Dataset,
    kernel: KernelParams,
    noise_variance: float = 1e-6,
    optimize: bool = True,
    *,
    n_restarts: int = 5,
    maxfev: int = 200,
    input_range=None,
    rng: np.random.Generator | None = None,
) -> GaussianGpModel:
    """Fit an exact GP to the inliers of ``data``.

    Parameters
    ----------
    data : Dataset
        Observations; only points with ``inlier_mask`` set are used.
    kernel, noise_variance :
        Hyperparameters, used as-is when ``optimize`` is false and as the
        first (warm) start of the search otherwise.
    optimize : bool
        Maximize the log marginal likelihood over log-space hyperparameters.
    n_restarts, maxfev :
        Extra Latin hypercube starts and the Nelder-Mead evaluation budget
        per start.
    input_range : array-like, optional
        Per-dimension width used to scale the lengthscale search box;
        defaults to the spread of the inputs.
    rng : numpy Generator, optional
        Source for restart locations (seed 0 when omitted).
    """
    view = data.masked()
    if optimize and len(view) < 2:
        raise InsufficientData(f"need at least 2 inliers, got {len(view)}")
    if len(view) < 1:
        raise InsufficientData("need at least one inlier")
    X, y = view.X, view.y
    if not np.all(np.isfinite(y)):
        raise ContractViolation("targets must be finite")

    if optimize:
        if input_range is None:
            input_range = np.ptp(X, axis=0)
        box = _hyperopt.log_box(np.asarray(input_range, dtype=float))
        rng = rng if rng is not None else np.random.default_rng(0)

        def objective(theta):
            k, s2n = unpack(theta, kernel)
            return _factor(X, y, k, s2n)[2]

        theta, _ = _hyperopt.maximize(
            objective, [pack(kernel, noise_variance)], box, n_restarts, rng, maxfev
        )
        kernel, noise_variance = unpack(theta, kernel)

    L, alpha, lml, extra = _factor(X, y, kernel, noise_variance)
    return GaussianGpModel(kernel, noise_variance, X, y, L, alpha, lml, extra, view)


def predict_gaussian(model: GaussianGpModel, Xq, with_noise: bool = False) -> Predictive:
    """Posterior mean k^T K^-1 y and variance k(x,x) - k^T K^-1 k at ``Xq``.

    A single d-vector gives scalar-shaped fields; an (m, d) array gives
    length-m arrays.
    """
    Xq = np.asarray(Xq, dtype=float)
    single = Xq.ndim == 1
    Xq = Xq.reshape(1, -1) if single else Xq
    Ks = cross_kernel(model.X, Xq, model.kernel)
    mean = Ks.T @ model.alpha_weights
    v = solve_triangular(model.cholesky_factor, Ks, lower=True, check_finite=False)
    var = model.kernel.signal_variance - np.einsum("ij,ij->j", v, v)
    if with_noise:
        var = var + model.noise_variance
    pred = Predictive.gaussian(mean, var, includes_noise=with_noise)
    return pred[0] if single else pred

"""Student-t process with additive kernel noise.

Hierarchical model:

    y | s2 ~ N(0, s2 * Kt),   Kt = k(X, X) + noise_variance * I
    s2     ~ InvGamma(shape=a, rate=b)

Marginalizing s2 gives a multivariate Student-t with 2a degrees of freedom
and scale matrix (b / a) Kt. Conditioning is conjugate: after t observations
s2 | y ~ InvGamma(a + t/2, b + q/2) with q = y^T Kt^-1 y, so a new
observation is Student-t with 2a + t degrees of freedom, location
k^T Kt^-1 y and squared scale (2b + q) / (2a + t) times the Gaussian-process
variance computed with Kt.

The kernel's own signal variance is entangled with s2 and is held at 1.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import gammaln

from robust_bo import _hyperopt
from robust_bo.errors import ContractViolation, InsufficientData
from robust_bo.gp import Dataset, Predictive
from robust_bo.kernels import KernelParams, cross_kernel, gram_matrix, jittered_cholesky


@dataclass(frozen=True)
class TProcessParams:
    kernel: KernelParams
    noise_variance: float = 1e-6
    ig_shape: float = 2.0
    ig_rate: float = 1.0

    def __post_init__(self):
        if not self.ig_shape > 1:
            raise ContractViolation(f"ig_shape must be > 1, got {self.ig_shape}")
        if not self.ig_rate > 0:
            raise ContractViolation(f"ig_rate must be > 0, got {self.ig_rate}")
        if not self.noise_variance >= 0:
            raise ContractViolation("noise_variance must be >= 0")


@dataclass(frozen=True)
class TProcessModel:
    params: TProcessParams
    X: np.ndarray
    y: np.ndarray
    chol: np.ndarray
    alpha: np.ndarray
    quad_form: float
    log_evidence: float

    @property
    def dof(self) -> float:
        return 2.0 * self.params.ig_shape + self.y.size

    def predict(self, Xq, with_noise: bool = True) -> Predictive:
        return predict_tprocess(self, Xq, with_noise)


def _factor(X, y, params: TProcessParams):
    K = gram_matrix(X, params.kernel, params.noise_variance)
    L, _ = jittered_cholesky(K, params.kernel.signal_variance)
    alpha = cho_solve((L, True), y, check_finite=False)
    q = float(y @ alpha)
    a, b, n = params.ig_shape, params.ig_rate, y.size
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    logp = (
        gammaln(a + n / 2.0)
        - gammaln(a)
        - 0.5 * n * np.log(2.0 * np.pi * b)
        - 0.5 * logdet
        - (a + n / 2.0) * np.log1p(q / (2.0 * b))
    )
    return L, alpha, q, float(logp)


def mvt_log_density(y, params: TProcessParams, X) -> float:
    """Log marginal density of ``y`` under the t-process prior at inputs ``X``."""
    y = np.asarray(y, dtype=float).reshape(-1)
    X = np.asarray(X, dtype=float)
    X = X.reshape(-1, 1) if X.ndim == 1 else X
    return _factor(X, y, params)[3]


def _pack(params: TProcessParams):
    return np.concatenate([np.log(params.kernel.lengthscales),
                           [np.log(max(params.noise_variance, 1e-300))]])


def _unpack(theta, params: TProcessParams):
    d = params.kernel.dim
    kernel = params.kernel._with_hypers(np.exp(theta[:d]), params.kernel.signal_variance)
    return replace(params, kernel=kernel, noise_variance=float(np.exp(theta[d])))


def fit_tprocess(
    data: Dataset,
    init: TProcessParams,
    optimize: bool = True,
    *,
    n_restarts: int = 5,
    maxfev: int = 200,
    input_range=None,
    rng: np.random.Generator | None = None,
) -> TProcessModel:
    """Fit on all points of ``data``; optimizes lengthscales and noise only.

    The inverse-gamma parameters and the kernel signal variance are kept
    as given in ``init``.
    """
    full = data.unmasked()
    if len(full) < (2 if optimize else 1):
        raise InsufficientData(f"not enough points to fit, got {len(full)}")
    X, y = full.X, full.y
    params = init
    if optimize:
        if input_range is None:
            input_range = np.ptp(X, axis=0)
        box = _hyperopt.log_box(np.asarray(input_range, dtype=float))
        box = np.delete(box, -2, axis=0)  # no signal-variance coordinate
        rng = rng if rng is not None else np.random.default_rng(0)
        theta, _ = _hyperopt.maximize(
            lambda th: _factor(X, y, _unpack(th, init))[3],
            [_pack(init)], box, n_restarts, rng, maxfev,
        )
        params = _unpack(theta, init)
    L, alpha, q, logp = _factor(X, y, params)
    return TProcessModel(params, X, y, L, alpha, q, logp)


def predict_tprocess(model: TProcessModel, Xq, with_noise: bool = True) -> Predictive:
    """Student-t predictive at ``Xq`` with 2a + t degrees of freedom."""
    Xq = np.asarray(Xq, dtype=float)
    single = Xq.ndim == 1
    Xq = Xq.reshape(1, -1) if single else Xq
    p = model.params
    Ks = cross_kernel(model.X, Xq, p.kernel)
    loc = Ks.T @ model.alpha
    v = solve_triangular(model.chol, Ks, lower=True, check_finite=False)
    s2 = p.kernel.signal_variance - np.einsum("ij,ij->j", v, v)
    if with_noise:
        s2 = s2 + p.noise_variance
    s2 = np.maximum(s2, 0.0)
    nu = model.dof
    scale2 = (2.0 * p.ig_rate + model.quad_form) / nu * s2
    pred = Predictive.student_t(loc, np.sqrt(scale2), nu, includes_noise=with_noise)
    return pred[0] if single else pred

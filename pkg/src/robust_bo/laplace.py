"""GP regression with a Student-t likelihood, fitted by the Laplace approximation.

The latent posterior p(f | y) is approximated by N(f_hat, (K^-1 + W)^-1),
where f_hat is the posterior mode and W = -d^2/df^2 log p(y | f) at the mode.
Because the Student-t log density is not concave in f, W can have negative
entries (observations far in the tails); the mode search copes with this by
falling back to a floored W whenever the exact Newton system is indefinite.

Numerics follow the usual K = L L^T reparameterization: every system is of
the form I + L^T W L, so the ill-conditioned K^-1 is never formed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import gammaln

from robust_bo import _hyperopt
from robust_bo.errors import ContractViolation, InsufficientData, NumericalFailure
from robust_bo.gp import Dataset, Predictive
from robust_bo.kernels import KernelParams, cross_kernel, gram_matrix, jittered_cholesky

MAX_NEWTON_ITER = 100
GRAD_TOL = 1e-6
INDEFINITE_REG = 1e-8


@dataclass(frozen=True)
class StudentTLikParams:
    """Student-t observation model y | f ~ t(f, scale, dof)."""

    dof: float = 4.0
    scale: float = 1.0

    def __post_init__(self):
        if not self.dof >= 2:
            raise ContractViolation(f"dof must be >= 2, got {self.dof}")
        if not self.scale > 0:
            raise ContractViolation(f"scale must be > 0, got {self.scale}")

    def log_pdf(self, y, f):
        return studentt_log_density(y, f, self)

    def dlog(self, y, f):
        return studentt_dlog(y, f, self)

    @property
    def noise_variance(self) -> float:
        """Variance of the observation noise (infinite for dof <= 2)."""
        if self.dof <= 2:
            return np.inf
        return self.scale ** 2 * self.dof / (self.dof - 2.0)

    def with_scale(self, scale: float) -> "StudentTLikParams":
        return StudentTLikParams(self.dof, scale)


@dataclass(frozen=True)
class GaussianLikParams:
    """Gaussian observation model; lets the Laplace machinery reproduce an exact GP."""

    variance: float

    def log_pdf(self, y, f):
        r = np.asarray(y) - np.asarray(f)
        return -0.5 * (np.log(2 * np.pi * self.variance) + r * r / self.variance)

    def dlog(self, y, f):
        r = np.asarray(y, dtype=float) - np.asarray(f, dtype=float)
        return r / self.variance, np.full_like(r, -1.0 / self.variance)

    @property
    def noise_variance(self) -> float:
        return self.variance

    @property
    def scale(self) -> float:
        return float(np.sqrt(self.variance))

    def with_scale(self, scale: float) -> "GaussianLikParams":
        return GaussianLikParams(scale ** 2)


def studentt_log_density(y, f, params: StudentTLikParams):
    """Log density of the location-scale Student-t at ``y`` with location ``f``."""
    nu, s = params.dof, params.scale
    r = np.asarray(y, dtype=float) - np.asarray(f, dtype=float)
    return _log_norm(nu) - np.log(s) - 0.5 * (nu + 1) * np.log1p(r * r / (nu * s * s))


@lru_cache(maxsize=64)
def _log_norm(nu: float) -> float:
    return float(gammaln((nu + 1) / 2) - gammaln(nu / 2) - 0.5 * np.log(nu * np.pi))


def studentt_dlog(y, f, params: StudentTLikParams):
    """First and second derivative of the log density with respect to ``f``.

    The second derivative is positive when |y - f| > scale * sqrt(dof).
    """
    nu, s2 = params.dof, params.scale ** 2
    r = np.asarray(y, dtype=float) - np.asarray(f, dtype=float)
    denom = nu * s2 + r * r
    d1 = (nu + 1) * r / denom
    d2 = (nu + 1) * (r * r - nu * s2) / (denom * denom)
    return d1, d2


@dataclass(frozen=True)
class LaplaceState:
    f_hat: np.ndarray
    W: np.ndarray
    converged: bool
    iterations: int
    a: np.ndarray = field(repr=False)  # K^-1 f_hat


@dataclass(frozen=True)
class StudentTGpModel:
    kernel: KernelParams
    lik: StudentTLikParams | GaussianLikParams
    X: np.ndarray
    y: np.ndarray
    chol_K: np.ndarray
    state: LaplaceState
    log_evidence: float
    # Cholesky of I + L^T W L with the exact W at the mode (None if indefinite).
    chol_posterior: np.ndarray | None = field(default=None, repr=False)
    chol_posterior_floored: np.ndarray | None = field(default=None, repr=False)

    @property
    def converged(self) -> bool:
        return self.state.converged

    def predict(self, Xq, on_indefinite: str = "raise") -> Predictive:
        return predict_studentt_laplace(self, Xq, on_indefinite)


def _chol_or_none(A):
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        return None


def _inner(L, W):
    A = (L.T * W) @ L
    A.flat[:: A.shape[0] + 1] += 1.0
    return A


def find_mode(L, y, lik, f0=None, max_iter=MAX_NEWTON_ITER, tol=GRAD_TOL):
    """Maximize log p(y|f) - 1/2 f^T K^-1 f by damped Newton with backtracking.

    ``L`` is the lower Cholesky factor of the prior covariance K.
    """
    n = y.size
    if f0 is None:
        f = np.zeros(n)
        a = np.zeros(n)
    else:
        f = np.array(f0, dtype=float)
        a = cho_solve((L, True), f, check_finite=False)

    def psi(f_, a_):
        return float(np.sum(lik.log_pdf(y, f_)) - 0.5 * a_ @ f_)

    obj = psi(f, a)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        d1, d2 = lik.dlog(y, f)
        grad = d1 - a
        if np.max(np.abs(grad)) <= tol:
            converged = True
            it -= 1
            break
        W = -d2
        M = _chol_or_none(_inner(L, W)) if np.any(W < 0) else None
        if M is None:
            M = np.linalg.cholesky(_inner(L, np.maximum(W, 0.0)))
        u = cho_solve((M, True), L.T @ grad, check_finite=False)
        df = L @ u
        da = solve_triangular(L, u, lower=True, trans="T", check_finite=False)
        slope = grad @ df
        step = 1.0
        accepted = False
        while step > 1e-12:
            f_new = f + step * df
            a_new = a + step * da
            obj_new = psi(f_new, a_new)
            if obj_new >= obj + 1e-4 * step * slope:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            # No representable ascent left: accept the point if (nearly) stationary.
            converged = np.max(np.abs(grad)) <= tol
            break
        f, a, obj = f_new, a_new, obj_new
    else:
        d1, _ = lik.dlog(y, f)
        converged = np.max(np.abs(d1 - a)) <= tol

    _, d2 = lik.dlog(y, f)
    return LaplaceState(f, -d2, bool(converged), it, a)


def _laplace_evidence(L, y, lik, state: LaplaceState):
    Wp = np.maximum(state.W, 0.0)
    Mp = np.linalg.cholesky(_inner(L, Wp))
    value = (
        np.sum(lik.log_pdf(y, state.f_hat))
        - 0.5 * state.a @ state.f_hat
        - np.sum(np.log(np.diag(Mp)))
    )
    return float(value), Mp


def _pack(kernel, lik):
    return np.concatenate([
        np.log(kernel.lengthscales),
        [np.log(kernel.signal_variance), 2.0 * np.log(lik.scale)],
    ])


def _unpack(theta, kernel, lik):
    d = kernel.dim
    k = kernel._with_hypers(np.exp(theta[:d]), float(np.exp(theta[d])))
    return k, lik.with_scale(float(np.exp(0.5 * theta[d + 1])))


def _build(X, y, kernel, lik, f0=None) -> StudentTGpModel:
    K = gram_matrix(X, kernel, 0.0)
    L, _ = jittered_cholesky(K, kernel.signal_variance)
    state = find_mode(L, y, lik, f0)
    evidence, Mp = _laplace_evidence(L, y, lik, state)
    M = _chol_or_none(_inner(L, state.W))
    if M is None:
        A = _inner(L, state.W)
        A.flat[:: A.shape[0] + 1] += INDEFINITE_REG
        M = _chol_or_none(A)
    return StudentTGpModel(kernel, lik, X, y, L, state, evidence, M, Mp)


def laplace_fit(
    data: Dataset,
    kernel: KernelParams,
    lik: StudentTLikParams | GaussianLikParams | None = None,
    optimize: bool = True,
    *,
    n_restarts: int = 5,
    maxfev: int = 200,
    input_range=None,
    rng: np.random.Generator | None = None,
    f0=None,
) -> StudentTGpModel:
    """Fit the Student-t likelihood GP to all points of ``data`` (the mask is ignored).

    With ``optimize`` the kernel hyperparameters and the likelihood scale are
    chosen to maximize the Laplace evidence

        log p(y | f_hat) - 1/2 f_hat^T K^-1 f_hat - 1/2 log|I + K W+|

    where W+ is W floored at zero. The degrees of freedom are never tuned.
    ``f0`` warm-starts the mode search.
    """
    lik = lik if lik is not None else StudentTLikParams()
    full = data.unmasked()
    if len(full) < 2:
        raise InsufficientData(f"need at least 2 points, got {len(full)}")
    X, y = full.X, full.y
    if not np.all(np.isfinite(y)):
        raise ContractViolation("targets must be finite")

    if optimize:
        if input_range is None:
            input_range = np.ptp(X, axis=0)
        box = _hyperopt.log_box(np.asarray(input_range, dtype=float))
        rng = rng if rng is not None else np.random.default_rng(0)
        warm = {"f": None if f0 is None else np.asarray(f0, dtype=float)}

        def objective(theta):
            k, lk = _unpack(theta, kernel, lik)
            K = gram_matrix(X, k, 0.0)
            L, _ = jittered_cholesky(K, k.signal_variance)
            state = find_mode(L, y, lk, warm["f"])
            if state.converged:
                warm["f"] = state.f_hat
            return _laplace_evidence(L, y, lk, state)[0]

        theta, _ = _hyperopt.maximize(
            objective, [_pack(kernel, lik)], box, n_restarts, rng, maxfev
        )
        kernel, lik = _unpack(theta, kernel, lik)
        f0 = warm["f"]

    return _build(X, y, kernel, lik, f0)


def latent_predictive(model: StudentTGpModel, Xq, on_indefinite: str = "raise"):
    """Latent mean k^T K^-1 f_hat and variance k - k^T (K + W^-1)^-1 k.

    The variance is evaluated as k - v^T v + |M^-1 v|^2 with v = L^-1 k and
    M M^T = I + L^T W L, which is the same quantity without inverting W.
    """
    Xq = np.asarray(Xq, dtype=float)
    Xq = Xq.reshape(1, -1) if Xq.ndim == 1 else Xq
    Ks = cross_kernel(model.X, Xq, model.kernel)
    mean = Ks.T @ model.state.a
    M = model.chol_posterior
    if M is None:
        if on_indefinite != "floor":
            raise NumericalFailure("Laplace posterior precision is indefinite at the mode")
        M = model.chol_posterior_floored
    v = solve_triangular(model.chol_K, Ks, lower=True, check_finite=False)
    w = solve_triangular(M, v, lower=True, check_finite=False)
    var = model.kernel.signal_variance - np.einsum("ij,ij->j", v, v) + np.einsum("ij,ij->j", w, w)
    return mean, np.maximum(var, 0.0)


def predict_studentt_laplace(model: StudentTGpModel, Xq, on_indefinite: str = "raise") -> Predictive:
    """Gaussian predictive over the latent function at ``Xq``."""
    single = np.ndim(Xq) == 1
    mean, var = latent_predictive(model, Xq, on_indefinite)
    pred = Predictive.gaussian(mean, var, includes_noise=False)
    return pred[0] if single else pred


def observation_predictive(model: StudentTGpModel, Xq, on_indefinite: str = "raise") -> Predictive:
    """Predictive for a new observation: latent predictive convolved with the likelihood scale.

    For the Student-t likelihood this is reported as a Student-t with the
    likelihood's dof, location equal to the latent mean and scale
    sqrt(latent variance + scale^2).
    """
    single = np.ndim(Xq) == 1
    mean, var = latent_predictive(model, Xq, on_indefinite)
    if isinstance(model.lik, GaussianLikParams):
        pred = Predictive.gaussian(mean, var + model.lik.variance, includes_noise=True)
    else:
        scale = np.sqrt(var + model.lik.scale ** 2)
        pred = Predictive.student_t(mean, scale, model.lik.dof, includes_noise=True)
    return pred[0] if single else pred

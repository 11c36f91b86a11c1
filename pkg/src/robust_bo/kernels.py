"""Stationary ARD covariance functions.

Two families are provided: the Matern 5/2 kernel used by every surrogate,
and the rational quadratic kernel used to generate out-of-model test
functions. Both share the same diagonal lengthscale metric

    r = sqrt(sum_j ((x_j - x'_j) / l_j)^2)

and carry a multiplicative signal variance.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np
from scipy.spatial.distance import cdist, pdist, squareform

from robust_bo.errors import ContractViolation, NumericalFailure

#: Diagonal jitter relative to the signal variance, always added.
JITTER = 1e-8
#: Largest relative jitter tried before giving up on a factorization.
MAX_JITTER = 1e-4


class KernelFamily(str, Enum):
    MATERN52 = "matern52"
    RATIONAL_QUADRATIC = "rational_quadratic"


@dataclass(frozen=True)
class KernelParams:
    """Hyperparameters of an ARD kernel.

    Parameters
    ----------
    lengthscales : array-like, shape (d,)
        One strictly positive lengthscale per input dimension.
    signal_variance : float
        Prior variance k(x, x).
    family : KernelFamily
        Kernel family.
    rq_alpha : float
        Shape parameter of the rational quadratic family (ignored otherwise).
    """

    lengthscales: np.ndarray
    signal_variance: float = 1.0
    family: KernelFamily = KernelFamily.MATERN52
    rq_alpha: float = 2.0

    def __post_init__(self):
        ls = np.array(self.lengthscales, dtype=float).reshape(-1)
        if ls.size == 0 or not np.all(np.isfinite(ls)) or np.any(ls <= 0):
            raise ContractViolation(f"lengthscales must be finite and > 0, got {ls}")
        if not (np.isfinite(self.signal_variance) and self.signal_variance > 0):
            raise ContractViolation(
                f"signal_variance must be > 0, got {self.signal_variance}"
            )
        if self.rq_alpha <= 0:
            raise ContractViolation(f"rq_alpha must be > 0, got {self.rq_alpha}")
        ls.setflags(write=False)
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "signal_variance", float(self.signal_variance))
        object.__setattr__(self, "family", KernelFamily(self.family))

    @property
    def dim(self) -> int:
        return self.lengthscales.size

    def with_(self, **changes) -> "KernelParams":
        return replace(self, **changes)

    def _with_hypers(self, lengthscales: np.ndarray, signal_variance: float) -> "KernelParams":
        # Unvalidated copy for optimizer inner loops; inputs come from exp().
        new = object.__new__(KernelParams)
        object.__setattr__(new, "lengthscales", lengthscales)
        object.__setattr__(new, "signal_variance", signal_variance)
        object.__setattr__(new, "family", self.family)
        object.__setattr__(new, "rq_alpha", self.rq_alpha)
        return new

    def __eq__(self, other):
        if not isinstance(other, KernelParams):
            return NotImplemented
        return (
            np.array_equal(self.lengthscales, other.lengthscales)
            and self.signal_variance == other.signal_variance
            and self.family == other.family
            and self.rq_alpha == other.rq_alpha
        )

    __hash__ = None


def _check_point(x, params: KernelParams) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != params.dim:
        raise ContractViolation(
            f"point has dimension {x.size}, kernel expects {params.dim}"
        )
    return x


def _check_matrix(X, params: KernelParams) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1) if X.size == params.dim else X.reshape(-1, 1)
    if X.ndim != 2 or X.shape[1] != params.dim:
        raise ContractViolation(
            f"inputs have shape {X.shape}, kernel expects (n, {params.dim})"
        )
    return X


def ard_distance(x, x_prime, params: KernelParams) -> float:
    """Scaled Euclidean distance between two points."""
    x = _check_point(x, params)
    x_prime = _check_point(x_prime, params)
    return float(np.sqrt(np.sum(((x - x_prime) / params.lengthscales) ** 2)))


def _profile(r: np.ndarray, params: KernelParams) -> np.ndarray:
    if params.family is KernelFamily.MATERN52:
        return params.signal_variance * (1.0 + r + r * r / 3.0) * np.exp(-r)
    a = params.rq_alpha
    return params.signal_variance * (1.0 + r * r / (2.0 * a)) ** (-a)


def kernel_from_distance(r, params: KernelParams):
    """Evaluate the kernel profile at scaled distance(s) ``r``."""
    return _profile(np.asarray(r, dtype=float), params)


def kernel_value(x, x_prime, params: KernelParams) -> float:
    return float(_profile(np.float64(ard_distance(x, x_prime, params)), params))


def cross_kernel(X1, X2, params: KernelParams) -> np.ndarray:
    """Matrix of kernel values between the rows of ``X1`` and ``X2``."""
    X1 = _check_matrix(X1, params)
    X2 = _check_matrix(X2, params)
    ls = params.lengthscales
    r = cdist(X1 / ls, X2 / ls)
    return _profile(r, params)


def gram_matrix(X, params: KernelParams, noise_variance: float = 0.0) -> np.ndarray:
    """Covariance of the rows of ``X`` plus ``noise_variance`` and jitter on the diagonal."""
    X = _check_matrix(X, params)
    if X.shape[0] < 1:
        raise ContractViolation("gram_matrix needs at least one point")
    r = squareform(pdist(X / params.lengthscales))
    K = _profile(r, params)
    K.flat[:: K.shape[0] + 1] += noise_variance + JITTER * params.signal_variance
    return K


def jittered_cholesky(K: np.ndarray, scale: float) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``K``, escalating extra diagonal jitter on failure.

    Extra jitter starts at ``10 * JITTER * scale`` and grows tenfold up to
    ``MAX_JITTER * scale``. Returns the factor and the extra jitter added.
    """
    eye = np.eye(K.shape[0])
    extra = 0.0
    level = JITTER
    while True:
        try:
            A = K + extra * eye if extra else K
            return np.linalg.cholesky(A), extra
        except np.linalg.LinAlgError:
            level *= 10.0
            if level > MAX_JITTER * (1 + 1e-9):
                raise NumericalFailure(
                    f"Cholesky failed with jitter up to {MAX_JITTER:g} x {scale:g}"
                ) from None
            extra = level * scale

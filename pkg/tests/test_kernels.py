import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from robust_bo.errors import ContractViolation, NumericalFailure
from robust_bo.kernels import (
    JITTER,
    KernelFamily,
    KernelParams,
    ard_distance,
    cross_kernel,
    gram_matrix,
    jittered_cholesky,
    kernel_from_distance,
    kernel_value,
)

import oracles

RQ = KernelFamily.RATIONAL_QUADRATIC
finite = st.floats(-5, 5, allow_nan=False)
positive = st.floats(0.05, 5)


def test_distance_identity():
    p = KernelParams([0.3, 2.0])
    assert ard_distance([1.0, 2.0], [1.0, 2.0], p) == 0.0


def test_distance_euclidean_reduction():
    assert ard_distance([0.0], [3.0], KernelParams([1.0])) == 3.0


def test_distance_scaled_by_lengthscale():
    # (1/1)^2 + (2/2)^2 = 2
    r = ard_distance([0, 0], [1, 2], KernelParams([1.0, 2.0]))
    assert r == pytest.approx(np.sqrt(2.0), abs=1e-15)


def test_dimension_mismatch():
    with pytest.raises(ContractViolation):
        ard_distance([0, 0], [1, 2, 3], KernelParams([1.0, 2.0]))
    with pytest.raises(ContractViolation):
        kernel_value([0.0], [1.0], KernelParams([1.0, 1.0]))


@pytest.mark.parametrize("bad", [[0.0], [-1.0], [np.nan], []])
def test_invalid_lengthscales(bad):
    with pytest.raises(ContractViolation):
        KernelParams(bad)


def test_invalid_signal_variance():
    with pytest.raises(ContractViolation):
        KernelParams([1.0], 0.0)


def test_matern_closed_form():
    p = KernelParams([1.0], 2.0)
    r = 1.5
    expected = 2.0 * (1 + r + r * r / 3) * np.exp(-r)
    assert kernel_value([0.0], [1.5], p) == pytest.approx(expected, rel=1e-14)


def test_rational_quadratic_closed_form():
    p = KernelParams([2.0], 1.5, RQ, rq_alpha=2.0)
    r = 0.5
    expected = 1.5 * (1 + r * r / 4) ** -2
    assert kernel_value([0.0], [1.0], p) == pytest.approx(expected, rel=1e-14)


@pytest.mark.parametrize("family", list(KernelFamily))
def test_zero_distance_gives_signal_variance(family):
    p = KernelParams([0.7, 0.2], 3.25, family)
    assert kernel_value([0.1, 0.4], [0.1, 0.4], p) == 3.25


def test_matern_strictly_decreasing():
    r = np.linspace(1e-3, 30, 2000)
    k = kernel_from_distance(r, KernelParams([1.0]))
    assert np.all(np.diff(k) < 0)


def test_gram_single_point():
    K = gram_matrix(np.zeros((1, 1)), KernelParams([1.0]), 0.0)
    assert K[0, 0] == 1.0 + JITTER


def test_gram_duplicate_rows():
    K = gram_matrix(np.zeros((2, 1)), KernelParams([1.0]), 0.1)
    assert K[0, 1] == K[1, 0] == 1.0
    assert np.allclose(np.diag(K), 1.1 + JITTER, rtol=0, atol=1e-15)


@given(arrays(float, (6, 2), elements=finite), positive, positive, st.sampled_from(list(KernelFamily)))
def test_gram_matches_dense_oracle_and_is_symmetric(X, l1, sv, family):
    p = KernelParams([l1, 2 * l1], sv, family)
    K = gram_matrix(X, p, 0.0)
    ref = oracles.dense_kernel(X, X, [l1, 2 * l1], sv, family.value) + JITTER * sv * np.eye(6)
    assert np.array_equal(K, K.T)
    np.testing.assert_allclose(K, ref, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(cross_kernel(X, X, p), ref - JITTER * sv * np.eye(6), rtol=1e-12, atol=1e-14)


def test_gram_positive_definite_random(rng):
    for _ in range(100):
        X = rng.uniform(size=(int(rng.integers(2, 30)), 3))
        p = KernelParams(rng.uniform(0.05, 2, 3), rng.uniform(0.1, 5))
        np.linalg.cholesky(gram_matrix(X, p))


def test_jitter_escalation_recovers_and_bounds():
    K = np.ones((3, 3))  # rank one
    L, extra = jittered_cholesky(K, 1.0)
    assert 0 < extra <= 1e-4
    np.testing.assert_allclose(L @ L.T, K + extra * np.eye(3), atol=1e-12)


def test_jitter_escalation_gives_up():
    with pytest.raises(NumericalFailure):
        jittered_cholesky(-np.eye(2), 1.0)

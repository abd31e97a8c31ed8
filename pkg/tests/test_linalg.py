import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from platoon_gpmpc.errors import DimensionMismatch, DomainError, NotPositiveDefinite
from platoon_gpmpc.linalg import (CholFactor, chol_solve, cholesky, normal_cdf,
                                  normal_inv_cdf)

from conftest import random_spd


def erf_series(x, terms=120):
    # Maclaurin series, fine for |x| < 3
    total, term = 0.0, x
    for n in range(terms):
        total += term / (2 * n + 1)
        term *= -x * x / (n + 1)
    return 2.0 / math.sqrt(math.pi) * total


def quantile_by_bisection(p):
    lo, hi = -6.0, 6.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if 0.5 * (1.0 + erf_series(mid / math.sqrt(2.0))) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def test_identity_factor_needs_no_jitter():
    f = cholesky(np.eye(3))
    np.testing.assert_array_equal(f.lower, np.eye(3))
    assert f.jitter == 0.0


def test_two_by_two_hand_factor():
    f = cholesky([[4.0, 2.0], [2.0, 3.0]])
    np.testing.assert_allclose(f.lower, [[2.0, 0.0], [1.0, math.sqrt(2.0)]], atol=1e-15)


def test_rank_one_matrix_takes_jitter():
    f = cholesky([[1.0, 1.0], [1.0, 1.0]], [0.0, 1e-6])
    assert f.jitter == pytest.approx(1e-6)
    np.testing.assert_allclose(f.lower @ f.lower.T, np.ones((2, 2)) + 1e-6 * np.eye(2), atol=1e-14)


def test_indefinite_matrix_raises():
    with pytest.raises(NotPositiveDefinite):
        cholesky([[1.0, 2.0], [2.0, 1.0]])


def test_asymmetric_or_non_finite_rejected():
    with pytest.raises(DimensionMismatch):
        cholesky([[1.0, 0.5], [0.0, 1.0]])
    with pytest.raises(NotPositiveDefinite):
        cholesky([[np.nan, 0.0], [0.0, 1.0]])


def test_chol_solve_examples():
    np.testing.assert_allclose(chol_solve(CholFactor(np.eye(2)), [1.0, 2.0]), [1.0, 2.0])
    np.testing.assert_allclose(chol_solve(cholesky(np.diag([4.0, 9.0])), [8.0, 27.0]), [2.0, 3.0])


def test_chol_solve_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        chol_solve(cholesky(np.eye(2)), np.ones(3))


def test_chol_solve_matches_explicit_inverse(rng):
    m = random_spd(rng, 5, cond=50.0)
    b = rng.standard_normal(5)
    x = chol_solve(cholesky(m), b)
    np.testing.assert_allclose(x, np.linalg.inv(m) @ b, rtol=1e-8, atol=1e-10)
    assert np.linalg.norm(m @ x - b) <= 1e-8 * np.linalg.norm(b)


@given(n=st.integers(1, 8), log_cond=st.floats(0.0, 10.0), seed=st.integers(0, 2**31))
def test_solve_accuracy_up_to_condition_1e10(n, log_cond, seed):
    rng = np.random.default_rng(seed)
    m = random_spd(rng, n, cond=10.0 ** log_cond)
    x_true = rng.standard_normal(n)
    b = m @ x_true
    f = cholesky(m, [0.0])
    x = chol_solve(f, b)
    ref = np.linalg.inv(m) @ b
    assert np.linalg.norm(x - ref) <= 1e-7 * np.linalg.norm(ref)


@given(n=st.integers(1, 8), seed=st.integers(0, 2**31))
def test_factor_reproduces_input(n, seed):
    m = random_spd(np.random.default_rng(seed), n, cond=1e6)
    f = cholesky(m)
    assert np.all(np.diag(f.lower) > 0)
    np.testing.assert_allclose(f.lower @ f.lower.T, m + f.jitter * np.eye(n),
                               rtol=1e-8, atol=1e-8 * np.abs(m).max())


@pytest.mark.parametrize("p, z", [(0.5, 0.0), (0.95, 1.6449), (0.975, 1.9600)])
def test_quantile_examples(p, z):
    assert normal_inv_cdf(p) == pytest.approx(z, abs=1e-4)


@pytest.mark.parametrize("p", [0.6, 0.9, 0.95, 0.975, 0.99, 0.999])
def test_quantile_matches_bisection_oracle(p):
    assert normal_inv_cdf(p) == pytest.approx(quantile_by_bisection(p), abs=1e-9)


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5, float("nan")])
def test_quantile_domain(p):
    with pytest.raises(DomainError):
        normal_inv_cdf(p)


@given(st.floats(1e-12, 1 - 1e-12))
def test_quantile_inverts_cdf(p):
    assert abs(normal_cdf(normal_inv_cdf(p)) - p) <= 1e-10


@given(st.floats(-6.0, 6.0))
def test_quantile_of_cdf_round_trip(z):
    p = normal_cdf(z)
    if 0.0 < p < 1.0:
        assert normal_inv_cdf(p) == pytest.approx(z, abs=1e-6)


@given(st.floats(1e-9, 0.5))
def test_quantile_antisymmetry(p):
    q = 1.0 - p
    assert abs(normal_inv_cdf(q) + normal_inv_cdf(1.0 - q)) <= 1e-12

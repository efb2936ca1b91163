import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dccal.errors import DimError, DomainError, RankError
from dccal.linalg import cholesky, is_pd, ols_solve, quad_form, to_correlation


def _random_pd(r, n):
    A = r.normal(size=(n, n))
    return A @ A.T + n * np.eye(n)


def test_cholesky_examples():
    np.testing.assert_array_equal(cholesky(np.eye(3)), np.eye(3))
    L = cholesky(np.array([[4.0, 2.0], [2.0, 3.0]]))
    np.testing.assert_allclose(L, [[2.0, 0.0], [1.0, np.sqrt(2.0)]], atol=1e-12)
    assert cholesky(np.array([[1.0, 2.0], [2.0, 1.0]])) is None
    assert not is_pd(np.array([[1.0, 1.0], [1.0, 1.0]]))


def test_cholesky_tolerance_rejects_near_singular():
    m = np.array([[1.0, 1.0], [1.0, 1.0 + 1e-14]])
    assert cholesky(m) is None


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 8))
def test_cholesky_round_trip(seed, n):
    m = _random_pd(np.random.default_rng(seed), n)
    L = cholesky(m)
    assert np.linalg.norm(L @ L.T - m) < 1e-10 * max(1.0, np.linalg.norm(m))
    L2 = cholesky(L @ L.T)
    np.testing.assert_allclose(L2, L, atol=1e-10 * max(1.0, np.abs(L).max()))


def test_quad_form_examples(rng):
    w = rng.normal(size=4)
    assert quad_form(np.eye(4), w) == pytest.approx(w @ w)
    assert quad_form(np.array([[4.0, 2.0], [2.0, 3.0]]), [1.0, 1.0]) == pytest.approx(11.0)
    assert quad_form(_random_pd(rng, 5), rng.normal(size=5)) > 0
    with pytest.raises(DimError):
        quad_form(np.eye(2), [1.0, 2.0, 3.0])


def test_to_correlation_examples():
    c = to_correlation(np.array([[4.0, 3.0], [3.0, 9.0]]))
    assert c[0, 1] == pytest.approx(0.5)
    assert c[0, 0] == 1.0 and c[1, 1] == 1.0
    corr = np.array([[1.0, 0.3], [0.3, 1.0]])
    np.testing.assert_allclose(to_correlation(corr), corr, atol=1e-15)
    with pytest.raises(DomainError):
        to_correlation(np.array([[0.0, 0.0], [0.0, 1.0]]))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 6))
def test_to_correlation_bounds(seed, n):
    c = to_correlation(_random_pd(np.random.default_rng(seed), n))
    assert np.all(np.diag(c) == 1.0)
    assert np.all(np.abs(c) <= 1.0)


def test_ols_examples(rng):
    y = rng.normal(size=4)
    np.testing.assert_allclose(ols_solve(np.eye(4), y), y, atol=1e-14)
    X = rng.normal(size=(30, 3))
    beta = np.array([1.0, -2.0, 0.5])
    np.testing.assert_allclose(X @ ols_solve(X, X @ beta), X @ beta, atol=1e-10)


def test_ols_matches_qr_oracle(rng):
    X = rng.normal(size=(200, 5))
    y = rng.normal(size=200)
    beta = ols_solve(X, y)
    Q, R = np.linalg.qr(X)
    oracle = np.linalg.solve(R, Q.T @ y)
    np.testing.assert_allclose(beta, oracle, atol=1e-8)
    np.testing.assert_allclose(X.T @ (y - X @ beta), 0.0, atol=1e-8)


def test_ols_rank_deficient(rng):
    X = rng.normal(size=(20, 2))
    X = np.column_stack([X, X[:, 0] + X[:, 1]])
    with pytest.raises(RankError):
        ols_solve(X, rng.normal(size=20))

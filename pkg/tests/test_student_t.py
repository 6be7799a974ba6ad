import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats
from scipy.special import multigammaln

from gpq.errors import InvalidArgument
from gpq.student_t import MatrixT, log_multigamma, matrix_normal_log_density


def _pd(r, k):
    A = r.normal(size=(k, k))
    return A @ A.T + k * np.eye(k)


def _random(r, n, p, nu=5.0):
    return MatrixT(r.normal(size=(n, p)), _pd(r, n), _pd(r, p), nu)


def test_multigamma_matches_scipy():
    for a, n in ((3.0, 1), (2.7, 3), (10.5, 6)):
        assert log_multigamma(a, n) == pytest.approx(multigammaln(a, n), rel=1e-14)
    with pytest.raises(InvalidArgument):
        log_multigamma(1.0, 4)


@pytest.mark.parametrize("nu", [1.0, 3.0, 7.5])
def test_scalar_case_is_a_rescaled_student_t(nu):
    # with unit scales the scalar law is T / sqrt(nu) for T ~ t_nu
    d = MatrixT([[0.0]], [[1.0]], [[1.0]], nu)
    ref = stats.t(nu, scale=1 / math.sqrt(nu))
    for x in (0.0, 1.0, 2.0):
        assert d.log_density([[x]]) == pytest.approx(ref.logpdf(x), abs=1e-10)


def test_scalar_density_integrates_to_one():
    d = MatrixT([[0.0]], [[1.0]], [[1.0]], 5.0)
    val, _ = integrate.quad(lambda x: math.exp(d.log_density([[x]])), -50, 50, limit=200)
    assert abs(val - 1) < 1e-6


def test_single_column_is_multivariate_t(rng):
    n, nu, w = 3, 4.0, 1.7
    S = _pd(rng, n)
    M = rng.normal(size=(n, 1))
    d = MatrixT(M, S, [[w]], nu)
    ref = stats.multivariate_t(M[:, 0], w * S / nu, df=nu)
    for _ in range(3):
        x = rng.normal(size=n)
        assert d.log_density(x[:, None]) == pytest.approx(ref.logpdf(x), rel=1e-12)


def test_mode_at_the_mean(rng):
    d = _random(rng, 3, 2)
    top = d.log_density(d.M)
    for _ in range(50):
        assert d.log_density(d.M + 0.1 * rng.normal(size=d.shape)) < top


def test_moments():
    assert MatrixT([[0.0]], [[1.0]], [[1.0]], 3.0).moments()[1][0, 0] == pytest.approx(1.0)
    mean, cov = MatrixT([[0.5]], [[1.0]], [[1.0]], 2.0).moments()
    assert cov is None and mean[0, 0] == 0.5
    _, cov = MatrixT(np.zeros((2, 2)), np.eye(2), np.eye(2), 4.0).moments()
    np.testing.assert_array_equal(cov, np.eye(4) / 2)


def test_moments_match_simulation():
    # with one column, X is multivariate t with scale Sigma * w / nu and df nu
    S = np.array([[2.0, 0.5], [0.5, 1.0]])
    w, nu = 1.5, 6.0
    _, cov = MatrixT(np.zeros((2, 1)), S, [[w]], nu).moments()
    draws = stats.multivariate_t(np.zeros(2), w * S / nu, df=nu).rvs(400_000, random_state=3)
    np.testing.assert_allclose(np.cov(draws.T), cov, rtol=0.03)


def test_transpose_duality_of_density(rng):
    d = _random(rng, 3, 4)
    X = rng.normal(size=(3, 4))
    assert d.T.log_density(X.T) == pytest.approx(d.log_density(X), abs=1e-12)


def test_row_conditioning_independent_block(rng):
    S = np.diag([2.0, 3.0, 1.5])
    M = rng.normal(size=(3, 2))
    O = _pd(rng, 2)
    d = MatrixT(M, S, O, 5.0)
    x = rng.normal(size=(1, 2))
    c = d.condition_rows([0], x)
    np.testing.assert_allclose(c.M, M[1:], atol=1e-15)
    np.testing.assert_allclose(c.Sigma, S[1:, 1:], atol=1e-15)
    e = x - M[:1]
    np.testing.assert_allclose(c.Omega, O + e.T @ e / 2.0, rtol=1e-13)
    assert c.nu == 6.0


def test_row_conditioning_at_the_mean(rng):
    d = _random(rng, 4, 3)
    c = d.condition_rows([1, 3], d.M[[1, 3]])
    np.testing.assert_allclose(c.Omega, d.Omega, rtol=1e-14)
    np.testing.assert_allclose(c.M, d.M[[0, 2]], atol=1e-14)
    assert c.nu == d.nu + 2


def test_row_conditioning_matches_joint_density_ratio(rng):
    # log p(x, y) - log p(x) = log p(y | x), with the marginal of x being MT(M_x, S_xx, O; nu)
    d = _random(rng, 3, 2)
    X = d.M + rng.normal(size=(3, 2))
    c = d.condition_rows([0], X[:1])
    marg = MatrixT(d.M[:1], d.Sigma[:1, :1], d.Omega, d.nu)
    assert c.log_density(X[1:]) == pytest.approx(d.log_density(X) - marg.log_density(X[:1]), abs=1e-10)


def test_column_conditioning(rng):
    M = rng.normal(size=(2, 3))
    O = np.diag([1.0, 2.0, 4.0])
    d = MatrixT(M, _pd(rng, 2), O, 4.0)
    c = d.condition_cols([2], rng.normal(size=(2, 1)))
    np.testing.assert_allclose(c.M, M[:, :2], atol=1e-15)
    np.testing.assert_allclose(c.Omega, O[:2, :2], atol=1e-15)
    assert c.nu == 5.0
    same = d.condition_cols([0, 1], M[:, :2])
    np.testing.assert_allclose(same.Sigma, d.Sigma, rtol=1e-14)


def test_column_conditioning_is_transposed_row_conditioning(rng):
    d = _random(rng, 3, 4)
    x = rng.normal(size=(3, 2))
    a = d.condition_cols([1, 3], x)
    b = d.T.condition_rows([1, 3], x.T).T
    for f in ("M", "Sigma", "Omega"):
        np.testing.assert_allclose(getattr(a, f), getattr(b, f), atol=1e-12)
    Y = rng.normal(size=(3, 2))
    assert a.log_density(Y) == pytest.approx(b.T.log_density(Y.T), abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(2, 5), p=st.integers(1, 4), k=st.integers(1, 3))
def test_conditional_scales_stay_positive_definite(seed, n, p, k):
    r = np.random.default_rng(seed)
    d = _random(r, n, p, nu=r.uniform(0.5, 20))
    k = min(k, n - 1)
    obs = r.choice(n, size=k, replace=False)
    c = d.condition_rows(obs, 5 * r.normal(size=(k, p)))
    np.linalg.cholesky(c.Sigma)
    np.linalg.cholesky(c.Omega)
    assert c.nu == pytest.approx(d.nu + k)


def test_large_nu_approaches_matrix_normal(rng):
    nu = 1e6
    for _ in range(5):
        M, U, V = rng.normal(size=(3, 2)), _pd(rng, 3), _pd(rng, 2)
        X = M + rng.normal(size=(3, 2))
        # scaling the row scale by nu makes the covariance U (x) V in the limit
        d = MatrixT(M, nu * U, V, nu)
        assert d.log_density(X) == pytest.approx(matrix_normal_log_density(X, M, U, V), abs=1e-3)


def test_invalid_arguments(rng):
    with pytest.raises(InvalidArgument):
        MatrixT(np.zeros((2, 2)), np.eye(2), np.eye(2), 0.0)
    with pytest.raises(InvalidArgument):
        MatrixT(np.zeros((2, 2)), np.eye(3), np.eye(2), 3.0)
    with pytest.raises(InvalidArgument):
        MatrixT(np.zeros((2, 2)), -np.eye(2), np.eye(2), 3.0)
    d = _random(rng, 3, 2)
    with pytest.raises(InvalidArgument):
        d.log_density(np.zeros((2, 3)))
    with pytest.raises(InvalidArgument):
        d.condition_rows([0, 1, 2], np.zeros((3, 2)))
    with pytest.raises(InvalidArgument):
        d.condition_rows([5], np.zeros((1, 2)))


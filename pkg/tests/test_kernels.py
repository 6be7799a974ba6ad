import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gpq.errors import InvalidArgument
from gpq.kernels import (
    Linear,
    Matern32,
    Matern52,
    PeriodicExponential,
    RationalQuadratic,
    SpectralMixture,
    SquaredExponential,
    gram,
    parse_kernel,
)

from conftest import KERNELS


def _fd_grads(k, X, h=1e-6):
    base = np.array([p.value for p in k.params()])
    out = []
    for i in range(base.size):
        step = h * max(1.0, abs(base[i]))
        up, dn = base.copy(), base.copy()
        up[i] += step
        dn[i] -= step
        out.append((k.with_values(up)(X) - k.with_values(dn)(X)) / (2 * step))
    return out


def test_matern32_at_zero_distance():
    assert Matern32(1.0, 1.0).eval([0.3], [0.3]) == 1.0


def test_se_unit_distance():
    assert SquaredExponential(1.0, (1.0,)).eval([0.0], [1.0]) == pytest.approx(math.exp(-0.5), rel=1e-15)


def test_periodic_full_period():
    k = PeriodicExponential(1.0, (1.0,), (2.0,))
    assert k.eval([0.0], [2.0]) == pytest.approx(1.0, abs=1e-15)


def test_spectral_mixture_at_zero_lag():
    k = SpectralMixture((1.0,), ((0.0,),), ((1 / (4 * math.pi**2),),))
    assert k.eval([0.4], [0.4]) == 1.0


def test_matern_half_integer_forms_match_bessel_expression():
    from scipy.special import gamma, kv

    for nu, cls in ((1.5, Matern32), (2.5, Matern52)):
        k = cls(1.0, 0.7)
        for r in (0.05, 0.4, 1.3, 3.0):
            a = math.sqrt(2 * nu) * r / 0.7
            ref = 2 ** (1 - nu) / gamma(nu) * a**nu * kv(nu, a)
            assert k.eval([0.0], [r]) == pytest.approx(ref, rel=1e-12)


def test_rq_matches_scale_mixture_of_se():
    # RQ is an SE mixture over inverse squared length scales with a Gamma(alpha, rate) density.
    from scipy import integrate
    from scipy.stats import gamma as gamma_dist

    alpha, ell, r = 1.7, 0.8, 1.1
    rate = alpha * ell**2
    dens = gamma_dist(alpha, scale=1 / rate).pdf
    val, _ = integrate.quad(lambda tau: math.exp(-0.5 * tau * r * r) * dens(tau), 0, np.inf)
    assert RationalQuadratic(1.0, alpha, ell).eval([0.0], [r]) == pytest.approx(val, rel=1e-8)


def test_single_point_gram_is_eval():
    for k in KERNELS.values():
        x = np.array([[0.3, -0.2]])
        assert gram(k, x).shape == (1, 1)
        assert gram(k, x)[0, 0] == pytest.approx(k.eval(x[0], x[0]), rel=1e-14)


def test_linear_identity_basis():
    np.testing.assert_allclose(gram(Linear(1.0), np.eye(4)), np.eye(4), atol=0)


def test_se_gram_on_three_points():
    K = gram(SquaredExponential(1.0, (1.0,)), np.array([-1.0, 0.0, 1.0]))
    expected = np.array(
        [[1, math.exp(-0.5), math.exp(-2)], [math.exp(-0.5), 1, math.exp(-0.5)], [math.exp(-2), math.exp(-0.5), 1]]
    )
    np.testing.assert_allclose(K, expected, rtol=1e-15)


def test_gram_entries_match_eval(rng):
    X, X2 = rng.normal(size=(5, 2)), rng.normal(size=(4, 2))
    for name, k in KERNELS.items():
        K = gram(k, X, X2)
        ref = np.array([[k.eval(a, b) for b in X2] for a in X])
        np.testing.assert_allclose(K, ref, rtol=1e-12, atol=1e-14, err_msg=name)


@pytest.mark.parametrize("name", sorted(KERNELS))
def test_grad_theta_matches_central_differences(name, rng):
    k = KERNELS[name]
    X = rng.normal(size=(7, 2))
    analytic = k.grad_theta(X)
    numeric = _fd_grads(k, X)
    assert len(analytic) == len(numeric) == k.n_params
    for i, (a, n) in enumerate(zip(analytic, numeric)):
        scale = max(np.abs(n).max(), 1e-3)
        assert np.abs(a - n).max() <= 1e-5 * scale, (name, k.params()[i].name)


@pytest.mark.parametrize("name", sorted(KERNELS))
def test_text_round_trip(name, rng):
    k = KERNELS[name]
    back = parse_kernel(str(k))
    assert str(back) == str(k)
    X = rng.normal(size=(4, 2))
    np.testing.assert_array_equal(back(X), k(X))


def test_parser_precedence_and_aliases():
    k = parse_kernel("LINEAR(sigma=1) + SE(sigma=1,l=2) * MATERN52(sigma=1,l=1)")
    assert type(k).__name__ == "Sum"
    assert type(k.right).__name__ == "Product"
    per = parse_kernel("PE(sigma=1,l=1,lambda=3)")
    assert per.period == (3.0,)


def test_parser_rejects_unknown_parameter():
    with pytest.raises(InvalidArgument):
        parse_kernel("SE(sigma=1,width=2)")


def test_non_positive_hyperparameter_rejected():
    with pytest.raises(InvalidArgument):
        SquaredExponential(1.0, (0.0,))
    with pytest.raises(InvalidArgument):
        RationalQuadratic(1.0, -1.0, 1.0)


def test_dimension_mismatch_rejected():
    k = SquaredExponential(1.0, (1.0, 2.0))
    with pytest.raises(InvalidArgument):
        k(np.zeros((3, 3)))
    with pytest.raises(InvalidArgument):
        KERNELS["se"](np.zeros((2, 2)), np.zeros((2, 3)))


def test_inactive_dimension_is_ignored(rng):
    k = KERNELS["se_inactive"]
    X = rng.normal(size=(5, 2))
    Y = X.copy()
    Y[:, 1] = rng.normal(size=5)
    np.testing.assert_array_equal(k(X), k(Y))
    assert [p.name for p in k.params()] == ["sigma", "l[0]"]


def test_diag_matches_gram(rng):
    X = rng.normal(size=(300, 2))
    for name, k in KERNELS.items():
        np.testing.assert_allclose(k.diag(X[:20]), np.diag(k(X[:20])), rtol=1e-13, err_msg=name)
    assert KERNELS["se"].diag(X).shape == (300,)


def test_spectral_mixture_can_be_negative():
    k = SpectralMixture((1.0,), ((0.5,),), ((0.001,),))
    assert k.eval([0.0], [1.0]) < 0


points = arrays(np.float64, st.tuples(st.integers(1, 8), st.just(2)),
                elements=st.floats(-3, 3, allow_nan=False, width=64))


@settings(max_examples=40, deadline=None)
@given(X=points, name=st.sampled_from(sorted(KERNELS)))
def test_gram_symmetric_psd(X, name):
    K = KERNELS[name](X)
    np.testing.assert_array_equal(K, K.T)
    tol = 1e-10 * len(X) * max(np.abs(K).max(), 1e-300)
    assert np.linalg.eigvalsh(K).min() >= -tol


@settings(max_examples=40, deadline=None)
@given(a=arrays(np.float64, 2, elements=st.floats(-3, 3)), b=arrays(np.float64, 2, elements=st.floats(-3, 3)),
       name=st.sampled_from(sorted(KERNELS)))
def test_eval_symmetric(a, b, name):
    k = KERNELS[name]
    assert k.eval(a, b) == pytest.approx(k.eval(b, a), rel=1e-14, abs=1e-300)

import math

import numpy as np
import pytest
from scipy import stats

from gpq.errors import InvalidArgument, NumericalFailure
from gpq.gp import sample_prior
from gpq.kernels import SquaredExponential
from gpq.selection import (
    HmcSettings,
    HyperVector,
    hmc_sample,
    hmc_transition,
    leapfrog,
    log_marginal_likelihood,
    maximize_likelihood,
    sample_hyperparameters,
)

from conftest import KERNELS


def _gaussian(q):
    return -0.5 * q @ q, -q


def test_single_point_value():
    theta = HyperVector.from_model(SquaredExponential(math.sqrt(0.5), (1.0,)), math.sqrt(0.5))
    val, _ = log_marginal_likelihood([[0.0]], [0.0], SquaredExponential(1.0, (1.0,)), theta)
    assert val == pytest.approx(-0.5 * math.log(2 * math.pi), rel=1e-14)


def test_zero_targets_leave_only_determinant(rng):
    X = rng.normal(size=(6, 2))
    k = KERNELS["m52"]
    theta = HyperVector.from_model(k, 0.3)
    val, _ = log_marginal_likelihood(X, np.zeros(6), k, theta)
    _, logdet = np.linalg.slogdet(k(X) + 0.09 * np.eye(6))
    assert val == pytest.approx(-3 * math.log(2 * math.pi) - 0.5 * logdet, rel=1e-12)


def test_value_matches_dense_formula(rng):
    X, y = rng.normal(size=(8, 2)), rng.normal(size=8)
    k = KERNELS["product"]
    theta = HyperVector.from_model(k, 0.4)
    C = k(X) + 0.16 * np.eye(8)
    ref = stats.multivariate_normal(np.zeros(8), C).logpdf(y)
    assert log_marginal_likelihood(X, y, k, theta)[0] == pytest.approx(ref, rel=1e-12)


@pytest.mark.parametrize("name", sorted(KERNELS))
def test_gradient_matches_central_differences(name, rng):
    X, y = rng.normal(size=(9, 2)), rng.normal(size=9)
    k = KERNELS[name]
    theta = HyperVector.from_model(k, 0.5)
    theta = theta.replace(theta.values + rng.uniform(-0.2, 0.2, size=theta.values.size))
    _, grad = log_marginal_likelihood(X, y, k, theta)
    h = 1e-6
    for i in range(grad.size):
        up, dn = theta.values.copy(), theta.values.copy()
        up[i] += h
        dn[i] -= h
        fd = (log_marginal_likelihood(X, y, k, theta.replace(up), with_grad=False)[0]
              - log_marginal_likelihood(X, y, k, theta.replace(dn), with_grad=False)[0]) / (2 * h)
        assert grad[i] == pytest.approx(fd, rel=1e-5, abs=1e-6), (name, theta.names[i])


def test_hyper_vector_layout():
    k = SquaredExponential(2.0, (0.5, 3.0))
    theta = HyperVector.from_model(k, 0.1)
    assert theta.names == ("sigma", "l[0]", "l[1]", "noise")
    np.testing.assert_allclose(theta.natural(), [2.0, 0.5, 3.0, 0.1], rtol=1e-15)
    k2, noise = theta.to_model(k)
    np.testing.assert_allclose([q.value for q in k2.params()], [2.0, 0.5, 3.0], rtol=1e-15)
    assert noise == pytest.approx(0.1, rel=1e-15)
    with pytest.raises(InvalidArgument):
        theta.replace([np.nan, 0, 0, 0])
    with pytest.raises(InvalidArgument):
        HyperVector.from_model(k, 0.0)


def _se_data(seed, n=40, ell=0.5):
    X = np.random.default_rng(seed).uniform(0, 5, size=(n, 1))
    f = sample_prior(SquaredExponential(1.0, (ell,)), X, 1, seed=seed)[0]
    y = f + 0.05 * np.random.default_rng(seed + 1000).normal(size=n)
    return X, y


def test_lengthscale_recovery():
    k0 = SquaredExponential(1.0, (1.0,))
    hits = 0
    for seed in range(10):
        X, y = _se_data(seed)
        theta = maximize_likelihood(X, y, k0, HyperVector.from_model(k0, 0.1), restarts=5, seed=seed)
        ell = theta.as_dict()["l"]
        hits += 0.25 <= ell <= 1.0
    assert hits >= 8


@pytest.mark.parametrize("seed", range(5))
def test_maximize_is_monotone(seed):
    X, y = _se_data(seed, n=25)
    k0 = KERNELS["m32"]
    theta0 = HyperVector.from_model(k0, 0.3)
    start = log_marginal_likelihood(X, y, k0, theta0, with_grad=False)[0]
    best = maximize_likelihood(X, y, k0, theta0, restarts=3, seed=seed)
    assert log_marginal_likelihood(X, y, k0, best, with_grad=False)[0] >= start


def test_optimum_is_a_fixed_point():
    X, y = _se_data(3, n=25)
    k0 = SquaredExponential(1.0, (1.0,))
    best = maximize_likelihood(X, y, k0, HyperVector.from_model(k0, 0.1), restarts=3, seed=0)
    again = maximize_likelihood(X, y, k0, best, restarts=1, seed=0)
    v1 = log_marginal_likelihood(X, y, k0, best, with_grad=False)[0]
    v2 = log_marginal_likelihood(X, y, k0, again, with_grad=False)[0]
    assert v2 == pytest.approx(v1, abs=1e-9)


def test_single_restart_is_deterministic():
    X, y = _se_data(4, n=20)
    k0 = SquaredExponential(1.0, (1.0,))
    t0 = HyperVector.from_model(k0, 0.1)
    a = maximize_likelihood(X, y, k0, t0, restarts=1, perturbation=0.0)
    b = maximize_likelihood(X, y, k0, t0, restarts=1, perturbation=0.0)
    np.testing.assert_array_equal(a.values, b.values)


def test_fixed_and_bounded_coordinates():
    X, y = _se_data(5, n=20)
    k0 = SquaredExponential(1.0, (1.0,))
    t0 = HyperVector.from_model(k0, 0.2)
    best = maximize_likelihood(X, y, k0, t0, restarts=2, seed=1, fixed=("noise",),
                               bounds={"l": (0.8, 2.0)})
    d = best.as_dict()
    assert d["noise"] == pytest.approx(0.2, rel=1e-15)
    assert 0.8 - 1e-12 <= d["l"] <= 2.0 + 1e-12


def test_restarts_must_be_positive():
    k0 = SquaredExponential(1.0, (1.0,))
    with pytest.raises(InvalidArgument):
        maximize_likelihood([[0.0]], [1.0], k0, HyperVector.from_model(k0, 0.1), restarts=0)


def test_leapfrog_is_reversible(rng):
    grad = lambda q: -np.array([q[0], 3 * q[1] ** 3 + q[1]])
    q0, p0 = rng.normal(size=2), rng.normal(size=2)
    q1, p1 = leapfrog(grad, q0, p0, 0.05, 40)
    q2, p2 = leapfrog(grad, q1, -p1, 0.05, 40)
    np.testing.assert_allclose(q2, q0, atol=1e-10)
    np.testing.assert_allclose(-p2, p0, atol=1e-10)


def test_tiny_step_is_always_accepted(rng):
    probs = []
    q = np.array([0.3, -1.2])
    for _ in range(50):
        q, _, _, acc = hmc_transition(_gaussian, q, rng, 1e-6, 1)
        probs.append(acc)
    assert min(probs) >= 1 - 1e-6


def test_standard_normal_moments():
    draws = hmc_sample(_gaussian, [2.0, -2.0], HmcSettings(step_size=0.2, n_leapfrog=10,
                                                             n_samples=10_000, burn_in=200, seed=5))
    assert draws.shape == (10_000, 2)
    assert np.all(np.abs(draws.mean(axis=0)) < 0.05)
    assert np.all(np.abs(draws.var(axis=0) - 1) < 0.1)


def test_chain_is_invariant_for_one_dimensional_target():
    mu, sd = 1.5, 0.7
    logp = lambda q: (-0.5 * ((q[0] - mu) / sd) ** 2, np.array([-(q[0] - mu) / sd**2]))
    draws = hmc_sample(logp, [0.0], HmcSettings(step_size=0.3, n_leapfrog=7, n_samples=10_000,
                                                 burn_in=200, thin=3, seed=9))
    ks = stats.kstest(draws[:, 0], stats.norm(mu, sd).cdf).statistic
    assert ks < 0.03


def test_hmc_is_seed_reproducible():
    s = HmcSettings(n_samples=50, burn_in=10, seed=2)
    np.testing.assert_array_equal(hmc_sample(_gaussian, [0.0], s), hmc_sample(_gaussian, [0.0], s))


def test_hmc_reports_offending_position():
    def bad(q):
        return (-np.inf, q) if q[0] > 0.5 else (-0.5 * q @ q, -q)

    with pytest.raises(NumericalFailure) as info:
        hmc_sample(bad, [1.0], HmcSettings(n_samples=5, burn_in=0, seed=0))
    np.testing.assert_array_equal(info.value.position, [1.0])


def test_settings_validation():
    with pytest.raises(InvalidArgument):
        HmcSettings(step_size=0.0)
    with pytest.raises(InvalidArgument):
        HmcSettings(n_leapfrog=0)


def test_hyperparameter_sampler_runs():
    X, y = _se_data(2, n=15)
    k0 = SquaredExponential(1.0, (1.0,))
    draws = sample_hyperparameters(X, y, k0, HyperVector.from_model(k0, 0.1),
                                   HmcSettings(step_size=0.02, n_leapfrog=10, n_samples=30, burn_in=10, seed=1))
    assert draws.shape == (30, 3)
    assert np.all(np.isfinite(draws))

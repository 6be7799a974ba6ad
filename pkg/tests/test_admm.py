import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize

from gpq.admm import (
    AdmmSettings,
    AllocationProblem,
    admm_generic,
    balanced_penalty,
    project_ball,
    solve_allocation,
)
from gpq.errors import InvalidArgument, NonConvergence
from gpq.linalg import jittered_cholesky


def _grid_solution(problem, step=1e-3):
    """Brute-force minimizer over a grid covering the feasible ellipse."""
    S = problem.Sigma
    half = problem.sigma_bar / np.sqrt(np.diag(S))  # per-axis extent of the ellipse
    axes = [np.arange(-h, h + step, step) for h in np.minimum(half, 5.0)]
    G = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes))
    vol = np.sqrt(np.einsum("ij,jk,ik->i", G, S, G))
    G = G[vol <= problem.sigma_bar]
    d = G - problem.x_prev
    obj = -G @ problem.mu + problem.lam * np.einsum("ij,ij->i", d, d)
    i = int(np.argmin(obj))
    return G[i], obj[i]


def _slsqp(problem):
    cons = {"type": "ineq", "fun": lambda x: problem.sigma_bar**2 - x @ problem.Sigma @ x}
    res = optimize.minimize(problem.objective, problem.x_prev, method="SLSQP", constraints=[cons],
                            options={"ftol": 1e-14, "maxiter": 500})
    return res.x


def test_project_ball_examples():
    np.testing.assert_array_equal(project_ball([0.3, 0.4], 1.0), [0.3, 0.4])
    np.testing.assert_allclose(project_ball([3.0, 4.0], 1.0), [0.6, 0.8], rtol=1e-15)
    np.testing.assert_array_equal(project_ball([0.0, 0.0], 2.0), [0.0, 0.0])
    with pytest.raises(InvalidArgument):
        project_ball([1.0], 0.0)


@settings(max_examples=50, deadline=None)
@given(v=st.lists(st.floats(-100, 100), min_size=1, max_size=5), r=st.floats(0.01, 50))
def test_project_ball_is_closest_point_in_ball(v, r):
    v = np.array(v)
    p = project_ball(v, r)
    assert np.linalg.norm(p) <= r * (1 + 1e-12)
    # any other point of the ball is at least as far from v
    other = project_ball(np.random.default_rng(0).normal(size=v.size), r)
    assert np.linalg.norm(v - p) <= np.linalg.norm(v - other) + 1e-9


def test_consensus_on_a_point():
    a = np.array([1.0, -2.0, 0.5])
    res = admm_generic(
        lambda z, u: (a + (z - u)) / 2,  # argmin 1/2|x-a|^2 + 1/2|x - z + u|^2
        lambda x, u: x + u,
        np.eye(3), -np.eye(3), np.zeros(3),
    )
    np.testing.assert_allclose(res.x, a, atol=1e-6)
    np.testing.assert_allclose(res.z, a, atol=1e-6)


@pytest.mark.parametrize("phi", [0.1, 1.0, 10.0])
def test_ball_constrained_consensus_is_projection(phi):
    a = np.array([2.0, -1.0, 2.0])
    res = admm_generic(
        lambda z, u: (a + phi * (z - u)) / (1 + phi),
        lambda x, u: project_ball(x + u, 1.0),
        np.eye(3), -np.eye(3), np.zeros(3), AdmmSettings(phi=phi),
    )
    np.testing.assert_allclose(res.z, project_ball(a, 1.0), atol=1e-5)


def test_generic_needs_phi():
    with pytest.raises(InvalidArgument):
        admm_generic(None, None, np.eye(1), np.eye(1), [0.0], AdmmSettings(phi=None))


def test_generic_non_convergence_carries_iterate():
    a = np.array([2.0, 0.0])
    with pytest.raises(NonConvergence) as info:
        admm_generic(
            lambda z, u: (a + (z - u)) / 2, lambda x, u: project_ball(x + u, 1.0),
            np.eye(2), -np.eye(2), np.zeros(2), AdmmSettings(max_iter=3),
        )
    assert info.value.result.iterations == 3
    assert info.value.result.x.shape == (2,)


def test_cholesky_identity(rng):
    for n in (1, 3, 8):
        A = rng.normal(size=(n, n))
        S = A @ A.T + 0.1 * np.eye(n)
        L, _ = jittered_cholesky(S)
        x = rng.normal(size=n)
        assert np.linalg.norm(L.T @ x) ** 2 == pytest.approx(x @ S @ x, rel=1e-10)


def test_inactive_constraint_closed_form(rng):
    mu = 1e-3 * rng.normal(size=4)
    x_prev = 0.01 * rng.normal(size=4)
    A = rng.normal(size=(4, 4))
    p = AllocationProblem(mu, A @ A.T + np.eye(4), 1.0, x_prev, 1e6)
    x, diag = solve_allocation(p)
    np.testing.assert_allclose(x, x_prev + mu / 2, atol=1e-6)
    assert not diag.rescaled


def test_zero_signal_zero_weights():
    p = AllocationProblem(np.zeros(3), np.diag([0.1, 0.2, 0.3]), 0.5, np.zeros(3), 0.1)
    x, _ = solve_allocation(p)
    np.testing.assert_allclose(x, 0.0, atol=1e-12)


def test_two_asset_instance_matches_grid():
    p = AllocationProblem([0.02, 0.01], np.diag([0.04, 0.01]), 0.1, [0.0, 0.0], 0.10)
    x, diag = solve_allocation(p)
    ref, _ = _grid_solution(p)
    np.testing.assert_allclose(x, ref, atol=2e-3)
    np.testing.assert_allclose(x, [0.1, 0.05], atol=1e-6)


@pytest.mark.parametrize("sigma_bar", [0.01, 0.015])
def test_two_asset_active_constraint_matches_grid(sigma_bar):
    p = AllocationProblem([0.02, 0.01], np.diag([0.04, 0.01]), 0.1, [0.0, 0.0], sigma_bar)
    x, diag = solve_allocation(p)
    _, ref_obj = _grid_solution(p)
    # the objective is flat along the boundary, so weights are checked against a constrained solver
    np.testing.assert_allclose(x, _slsqp(p), atol=1e-5)
    assert diag.volatility == pytest.approx(sigma_bar, rel=1e-6)
    assert p.objective(x) <= ref_obj + 1e-5


def test_three_asset_instances_beat_grid(rng):
    for _ in range(3):
        A = rng.normal(size=(3, 3))
        S = 0.01 * (A @ A.T + 0.5 * np.eye(3))
        p = AllocationProblem(0.02 * rng.normal(size=3), S, 0.05, 0.1 * rng.normal(size=3), 0.05)
        x, diag = solve_allocation(p)
        _, ref_obj = _grid_solution(p, step=4e-3)
        assert p.objective(x) <= ref_obj + 1e-5
        assert diag.volatility <= p.sigma_bar * (1 + 1e-6)


def test_matches_kkt_of_the_active_problem(rng):
    # with the constraint active, x = (mu + 2 lam x_prev + ...) solves (2 lam I + 2 eta Sigma) x = mu + 2 lam x_prev
    A = rng.normal(size=(4, 4))
    S = 0.02 * (A @ A.T + np.eye(4))
    p = AllocationProblem(0.05 * rng.normal(size=4), S, 0.2, np.zeros(4), 0.02)
    x, diag = solve_allocation(p)
    assert diag.volatility == pytest.approx(0.02, rel=1e-6)
    g = -p.mu + 2 * p.lam * (x - p.x_prev)  # objective gradient
    n = S @ x  # constraint normal
    eta = -(g @ n) / (n @ n)
    assert eta > 0
    np.testing.assert_allclose(g + eta * n, 0.0, atol=1e-6 * np.linalg.norm(g))


@pytest.mark.parametrize("phi", [0.1, 1.0, 10.0])
def test_penalty_changes_path_not_optimum(phi):
    p = AllocationProblem([0.02, 0.01, -0.005], np.diag([0.04, 0.01, 0.02]), 0.1, [0.1, 0.0, 0.0], 0.01)
    ref, _ = solve_allocation(p, AdmmSettings(phi=None))
    x, _ = solve_allocation(p, AdmmSettings(phi=phi, max_iter=100_000))
    np.testing.assert_allclose(x, ref, atol=1e-5)


def test_balanced_penalty():
    p = AllocationProblem([0.0, 0.0], np.diag([0.01, 0.03]), 0.1, [0.0, 0.0], 1.0)
    assert balanced_penalty(p) == pytest.approx(2 * 0.1 * 2 / 0.04)
    q = AllocationProblem([0.0, 0.0], np.diag([0.01, 0.03]), 0.0, [0.0, 0.0], 1.0)
    assert balanced_penalty(q) == 1.0


def test_residuals_trend_down(rng):
    A = rng.normal(size=(5, 5))
    p = AllocationProblem(0.02 * rng.normal(size=5), 0.01 * (A @ A.T + np.eye(5)), 0.1,
                          np.zeros(5), 0.01)
    _, diag = solve_allocation(p, AdmmSettings(phi=1.0, max_iter=100_000), record_every=1)
    res = dict(diag.history)
    ks = [k for k in (1, 2, 5, 10, 20, 50) if 10 * k in res]
    assert ks
    for k in ks:
        assert res[10 * k] < res[k]


def test_zero_lambda_needs_invertible_covariance():
    p = AllocationProblem([0.01, 0.02], np.diag([0.04, 0.01]), 0.0, [0.0, 0.0], 0.05)
    x, diag = solve_allocation(p)
    assert diag.volatility == pytest.approx(0.05, rel=1e-6)
    # without the ridge the optimum is mu scaled onto the ellipse along Sigma^{-1} mu
    w = np.linalg.solve(p.Sigma, p.mu)
    np.testing.assert_allclose(x, w * 0.05 / math.sqrt(w @ p.Sigma @ w), atol=1e-5)


def test_problem_validation():
    with pytest.raises(InvalidArgument):
        AllocationProblem([0.0], [[1.0, 0.0]], 0.1, [0.0], 1.0)
    with pytest.raises(InvalidArgument):
        AllocationProblem([0.0], [[1.0]], -0.1, [0.0], 1.0)
    with pytest.raises(InvalidArgument):
        AllocationProblem([0.0], [[1.0]], 0.1, [0.0], 0.0)
    with pytest.raises(InvalidArgument):
        AdmmSettings(phi=0.0)


def test_non_convergence_reports_residuals():
    p = AllocationProblem([0.02, 0.01], np.diag([0.04, 0.01]), 0.1, [0.0, 0.0], 0.01)
    with pytest.raises(NonConvergence) as info:
        solve_allocation(p, AdmmSettings(phi=1.0, max_iter=2))
    assert info.value.result.iterations == 2
    assert math.isfinite(info.value.result.primal_residual)

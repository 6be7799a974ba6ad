"""ADMM with a scaled dual, and the volatility-capped allocation solver built on it."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
from scipy import linalg

from .errors import InvalidArgument, NonConvergence, NumericalFailure
from .linalg import jittered_cholesky, symmetrize

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AdmmSettings:
    """Penalty ``phi`` and the absolute/relative stopping tolerances.

    ``phi=None`` is accepted by :func:`solve_allocation` only and selects
    :func:`balanced_penalty` for each problem.
    """

    phi: float | None = 1.0
    abs_tol: float = 1e-8
    rel_tol: float = 1e-6
    max_iter: int = 10_000

    def __post_init__(self):
        if self.phi is not None and not self.phi > 0:
            raise InvalidArgument(f"phi must be > 0, got {self.phi}")
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise InvalidArgument("tolerances must be > 0")
        if self.max_iter < 1:
            raise InvalidArgument("max_iter must be >= 1")


@dataclass(frozen=True)
class AdmmResult:
    x: np.ndarray
    z: np.ndarray
    u: np.ndarray
    iterations: int
    primal_residual: float
    dual_residual: float
    history: tuple = ()


def project_ball(v, radius: float):
    """Euclidean projection of ``v`` onto the ball of the given radius around 0."""
    if not radius > 0:
        raise InvalidArgument(f"radius must be > 0, got {radius}")
    v = np.asarray(v, dtype=float)
    norm = np.linalg.norm(v)
    return v if norm <= radius else v * (radius / norm)


def admm_generic(
    x_step: Callable,
    z_step: Callable,
    A,
    B,
    c,
    settings: AdmmSettings = AdmmSettings(),
    *,
    z0=None,
    u0=None,
    record_every: int = 0,
) -> AdmmResult:
    """Solve ``min f(x) + g(z)`` subject to ``A x + B z = c``.

    ``x_step(z, u)`` must return ``argmin_x f(x) + phi/2 ||A x + B z - c + u||^2``
    and ``z_step(x, u)`` the analogous minimizer over ``z``; ``u`` is the
    scaled dual. Iteration stops when the primal residual ``A x + B z - c``
    and the dual residual ``phi A^T B (z - z_prev)`` fall below the combined
    absolute/relative thresholds. With ``record_every = k > 0`` the maximum
    of both residuals is recorded every ``k`` iterations in ``history``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    c = np.asarray(c, dtype=float).ravel()
    m, n = A.shape
    if B.shape[0] != m or c.size != m:
        raise InvalidArgument("A, B and c must share their row dimension")
    phi = settings.phi
    if phi is None:
        raise InvalidArgument("admm_generic needs an explicit penalty phi")
    z = np.zeros(B.shape[1]) if z0 is None else np.asarray(z0, dtype=float).copy()
    u = np.zeros(m) if u0 is None else np.asarray(u0, dtype=float).copy()
    history = []
    x = None
    r_norm = s_norm = math.inf
    for k in range(1, settings.max_iter + 1):
        x = x_step(z, u)
        z_prev = z
        z = z_step(x, u)
        Ax, Bz = A @ x, B @ z
        r = Ax + Bz - c
        u = u + r
        r_norm = float(np.linalg.norm(r))
        s_norm = float(np.linalg.norm(phi * A.T @ (B @ (z - z_prev))))
        if record_every and k % record_every == 0:
            history.append((k, max(r_norm, s_norm)))
        eps_pri = math.sqrt(m) * settings.abs_tol + settings.rel_tol * max(
            np.linalg.norm(Ax), np.linalg.norm(Bz), np.linalg.norm(c)
        )
        eps_dual = math.sqrt(n) * settings.abs_tol + settings.rel_tol * phi * np.linalg.norm(A.T @ u)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(z))):
            raise NumericalFailure(f"ADMM iterate became non-finite at iteration {k}")
        if r_norm <= eps_pri and s_norm <= eps_dual:
            return AdmmResult(x, z, u, k, r_norm, s_norm, tuple(history))
    result = AdmmResult(x, z, u, settings.max_iter, r_norm, s_norm, tuple(history))
    raise NonConvergence(
        f"ADMM stopped after {settings.max_iter} iterations "
        f"(primal {r_norm:.3g}, dual {s_norm:.3g})",
        result=result,
    )


@dataclass(frozen=True)
class AllocationProblem:
    """``max mu^T x - lam ||x - x_prev||^2`` subject to ``sqrt(x^T Sigma x) <= sigma_bar``."""

    mu: np.ndarray
    Sigma: np.ndarray
    lam: float
    x_prev: np.ndarray
    sigma_bar: float

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float).ravel()
        S = np.atleast_2d(np.asarray(self.Sigma, dtype=float))
        xp = np.asarray(self.x_prev, dtype=float).ravel()
        n = mu.size
        if S.shape != (n, n) or xp.size != n:
            raise InvalidArgument(f"mu, Sigma and x_prev disagree on the asset count {n}")
        if not np.allclose(S, S.T, atol=1e-12 * max(1.0, np.abs(S).max())):
            raise InvalidArgument("Sigma must be symmetric")
        if self.lam < 0:
            raise InvalidArgument("lambda must be >= 0")
        if not self.sigma_bar > 0:
            raise InvalidArgument("target volatility must be > 0")
        for name, arr in (("mu", mu), ("Sigma", S), ("x_prev", xp)):
            if not np.all(np.isfinite(arr)):
                raise InvalidArgument(f"{name} contains non-finite values")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "Sigma", symmetrize(S))
        object.__setattr__(self, "x_prev", xp)
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "sigma_bar", float(self.sigma_bar))

    def objective(self, x) -> float:
        """The minimized form ``-mu^T x + lam ||x - x_prev||^2``."""
        x = np.asarray(x, dtype=float)
        d = x - self.x_prev
        return float(-self.mu @ x + self.lam * d @ d)

    def volatility(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return math.sqrt(max(float(x @ self.Sigma @ x), 0.0))


@dataclass(frozen=True)
class AllocationDiagnostics:
    iterations: int
    primal_residual: float
    dual_residual: float
    volatility: float
    jitter: float
    rescaled: bool
    phi: float = 1.0
    history: tuple = ()


def balanced_penalty(problem: AllocationProblem) -> float:
    """``2 lam n / trace(Sigma)``: balances the two terms of the x-step matrix.

    Falls back to 1 when either term vanishes. Convergence speed of the
    allocation ADMM depends strongly on ``phi`` relative to the scale of
    ``Sigma``; this choice keeps iteration counts in the tens across
    covariance horizons and penalty strengths.
    """
    tr = float(np.trace(problem.Sigma))
    if problem.lam <= 0 or tr <= 0:
        return 1.0
    return 2.0 * problem.lam * problem.mu.size / tr


def solve_allocation(
    problem: AllocationProblem, settings: AdmmSettings = AdmmSettings(), *, record_every: int = 0
):
    """Solve the allocation problem by ADMM with the Cholesky split.

    With ``Sigma = L L^T`` and ``R = L^T`` the constraint becomes
    ``||R x|| <= sigma_bar``; ADMM runs on ``-R x + z = 0`` with the z-step a
    projection onto the ball of radius ``sigma_bar``. The x-step solves
    ``(phi Sigma + 2 lam I) x = mu + 2 lam x_prev + phi L (z + u)`` with a
    factorization computed once.

    ``settings.phi=None`` picks :func:`balanced_penalty`. Returns
    ``(x, AllocationDiagnostics)``. If the converged iterate exceeds the
    bound by more than the relative tolerance it is scaled back onto it.
    """
    p = problem
    n = p.mu.size
    L, jitter = jittered_cholesky(p.Sigma)
    R = L.T
    if settings.phi is None:
        settings = replace(settings, phi=balanced_penalty(p))
    phi = settings.phi
    H = phi * (L @ L.T) + 2 * p.lam * np.eye(n)
    try:
        H_factor = linalg.cho_factor(H, lower=True)
    except linalg.LinAlgError:
        raise NumericalFailure(
            "phi * Sigma + 2 * lambda * I is singular; use lambda > 0"
        ) from None
    rhs0 = p.mu + 2 * p.lam * p.x_prev

    def x_step(z, u):
        return linalg.cho_solve(H_factor, rhs0 + phi * (L @ (z + u)))

    def z_step(x, u):
        return project_ball(R @ x - u, p.sigma_bar)

    res = admm_generic(x_step, z_step, -R, np.eye(n), np.zeros(n), settings, record_every=record_every)
    x = res.x
    vol = p.volatility(x)
    rescaled = False
    if vol > p.sigma_bar * (1 + settings.rel_tol):
        x = x * (p.sigma_bar / vol)
        vol = p.volatility(x)
        rescaled = True
    logger.debug("allocation solved in %d iterations (vol %.6g)", res.iterations, vol)
    return x, AllocationDiagnostics(
        res.iterations, res.primal_residual, res.dual_residual, vol, jitter, rescaled, phi, res.history
    )

"""Exact and low-rank Gaussian-process regression with a zero prior mean.

Posteriors describe the latent ``f(x*)``. Callers forecasting noisy
observations ``y* = f(x*) + eps`` add ``noise**2`` to the covariance
diagonal themselves.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument, NumericalFailure
from .kernels import Kernel, as_points
from .linalg import (
    cho_solve_lower,
    jittered_cholesky,
    solve_lower,
    symmetrize,
)

logger = logging.getLogger(__name__)

VARIANCE_CLAMP = 1e-10


@dataclass(frozen=True)
class GaussianPosterior:
    mean: np.ndarray
    cov: np.ndarray

    @property
    def var(self) -> np.ndarray:
        return np.diag(self.cov).copy()

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(np.maximum(self.var, 0.0))


@dataclass(frozen=True, eq=False)
class GpModel:
    """A fitted GP: training data plus the cached factor and weights.

    ``chol`` is the lower factor of ``K(X, X) + noise^2 I`` (plus ``jitter``
    on the diagonal when the plain factorization failed) and ``alpha`` the
    solution of that system against ``y``.
    """

    X: np.ndarray
    y: np.ndarray
    kernel: Kernel
    noise: float
    chol: np.ndarray
    alpha: np.ndarray
    jitter: float = 0.0

    @property
    def n(self) -> int:
        return self.X.shape[0]


def _clamp_cov(cov):
    cov = symmetrize(cov)
    d = np.diag(cov)
    if np.any(d < 0):
        worst = d.min()
        if worst < -VARIANCE_CLAMP * max(1.0, np.abs(d).max()):
            logger.warning("posterior variance %.3g below clamp tolerance", worst)
        idx = np.flatnonzero(d < 0)
        cov[idx, idx] = 0.0
    return cov


def fit(X, y, kernel: Kernel, noise: float = 0.0) -> GpModel:
    """Factor ``K(X, X) + noise^2 I`` and solve for the posterior weights.

    Raises :class:`NumericalFailure` when the matrix cannot be factored even
    after jitter escalation, and immediately when ``noise == 0`` and ``X``
    contains repeated rows (the Gram matrix is then exactly singular).
    """
    X = as_points(X)
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] < 1:
        raise InvalidArgument("need at least one training point")
    if y.shape[0] != X.shape[0]:
        raise InvalidArgument(f"{X.shape[0]} inputs but {y.shape[0]} targets")
    if not np.isfinite(noise) or noise < 0:
        raise InvalidArgument(f"noise must be >= 0, got {noise}")
    if noise == 0.0 and len(np.unique(X, axis=0)) < X.shape[0]:
        raise NumericalFailure("duplicate inputs with zero noise give a singular Gram matrix")
    K = kernel(X)
    K[np.diag_indices_from(K)] += noise**2
    chol, added = jittered_cholesky(K)
    alpha = cho_solve_lower(chol, y)
    return GpModel(X, y, kernel, float(noise), chol, alpha, added)


def posterior(model: GpModel, Xs, *, full_cov: bool = True) -> GaussianPosterior:
    """Posterior over ``f`` at ``Xs``.

    With ``full_cov=False`` only the diagonal is computed and ``cov`` is a
    diagonal matrix; useful when scanning thousands of candidates.
    """
    Xs = as_points(Xs)
    if Xs.shape[0] == 0:
        raise InvalidArgument("no prediction points")
    if Xs.shape[1] != model.X.shape[1]:
        raise InvalidArgument(
            f"prediction inputs have dimension {Xs.shape[1]}, model has {model.X.shape[1]}"
        )
    if not full_cov:
        mean, var = posterior_mean_var(model, Xs)
        return GaussianPosterior(mean, np.diag(var))
    Ks = model.kernel(model.X, Xs)
    V = solve_lower(model.chol, Ks)
    cov = model.kernel(Xs) - V.T @ V
    return GaussianPosterior(Ks.T @ model.alpha, _clamp_cov(cov))


def posterior_mean_var(model: GpModel, Xs):
    """Posterior mean and marginal variance without building a dense covariance."""
    Xs = as_points(Xs)
    Ks = model.kernel(model.X, Xs)
    mean = Ks.T @ model.alpha
    V = solve_lower(model.chol, Ks)
    prior = model.kernel.diag(Xs)
    var = prior - np.einsum("ij,ij->j", V, V)
    return mean, np.maximum(var, 0.0)


def sample_prior(kernel: Kernel, X, n_paths: int, seed) -> np.ndarray:
    """Draw ``n_paths`` prior sample paths ``P U`` at the inputs ``X``."""
    X = as_points(X)
    if n_paths < 0:
        raise InvalidArgument("n_paths must be >= 0")
    chol, _ = jittered_cholesky(kernel(X))
    rng = np.random.default_rng(seed)
    U = rng.standard_normal((n_paths, X.shape[0]))
    return U @ chol.T


def sor_posterior(model: GpModel, Xm, Xs) -> GaussianPosterior:
    """Subset-of-regressors posterior with inducing inputs ``Xm``.

    Factors ``Kt = K_mn K_nm + noise^2 K_mm`` as ``L_m A L_m^T`` with
    ``A = V V^T + noise^2 I`` and ``V = L_m^{-1} K_mn``; only ``m x m``
    matrices are factorized and the squared condition number of
    ``K_mn K_nm`` is never formed.
    """
    Xm = as_points(Xm)
    Xs = as_points(Xs)
    if Xm.shape[0] < 1:
        raise InvalidArgument("need at least one inducing point")
    for name, arr in (("inducing", Xm), ("prediction", Xs)):
        if arr.shape[1] != model.X.shape[1]:
            raise InvalidArgument(f"{name} inputs have the wrong dimension")
    k, s2 = model.kernel, model.noise**2
    Lm, _ = jittered_cholesky(k(Xm))
    V = solve_lower(Lm, k(Xm, model.X))
    A = V @ V.T
    A[np.diag_indices_from(A)] += s2
    La, _ = jittered_cholesky(symmetrize(A))
    W = solve_lower(Lm, k(Xm, Xs))  # L_m^{-1} K_ms
    mean = W.T @ cho_solve_lower(La, V @ model.y)
    G = solve_lower(La, W)
    cov = s2 * (G.T @ G)
    return GaussianPosterior(mean, _clamp_cov(cov))


def condition_gaussian(mu_x, mu_y, S_xx, S_xy, S_yy, x, S_yx=None):
    """Conditional law of ``Y | X = x`` for a jointly Gaussian ``(X, Y)``.

    Returns ``(mean, cov)``. ``S_yx`` defaults to ``S_xy.T``.
    """
    mu_x = np.atleast_1d(np.asarray(mu_x, dtype=float))
    mu_y = np.atleast_1d(np.asarray(mu_y, dtype=float))
    S_xx = np.atleast_2d(np.asarray(S_xx, dtype=float))
    S_xy = np.atleast_2d(np.asarray(S_xy, dtype=float))
    S_yy = np.atleast_2d(np.asarray(S_yy, dtype=float))
    S_yx = S_xy.T if S_yx is None else np.atleast_2d(np.asarray(S_yx, dtype=float))
    x = np.atleast_1d(np.asarray(x, dtype=float))
    nx, ny = mu_x.size, mu_y.size
    if S_xx.shape != (nx, nx) or S_xy.shape != (nx, ny) or S_yy.shape != (ny, ny):
        raise InvalidArgument("covariance blocks do not match the mean vectors")
    if x.size != nx:
        raise InvalidArgument("observation has the wrong length")
    chol, _ = jittered_cholesky(symmetrize(S_xx), jitter=False)
    mean = mu_y + S_yx @ cho_solve_lower(chol, x - mu_x)
    cov = S_yy - S_yx @ cho_solve_lower(chol, S_xy)
    return mean, symmetrize(cov)

"""Matrix-variate Student-t distribution with row and column conditioning.

The parameterization follows Gupta and Nagar: ``X ~ MT_{n,p}(M, Sigma,
Omega; nu)`` has density proportional to
``|I_n + Sigma^{-1} (X - M) Omega^{-1} (X - M)^T|^{-(nu + n + p - 1) / 2}``
and ``cov(vec X^T) = Sigma (x) Omega / (nu - 2)``. In the scalar case the
scale is ``1 / sqrt(nu)`` times that of the usual Student-t, i.e.
``X = T / sqrt(nu)`` with ``T ~ t_nu``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.special import gammaln

from .errors import InvalidArgument, NumericalFailure
from .linalg import logdet_from_cholesky, solve_lower, symmetrize


def log_multigamma(a: float, n: int) -> float:
    """``log Gamma_n(a) = n(n-1)/4 log(pi) + sum_j log Gamma(a - (j-1)/2)``."""
    if a <= (n - 1) / 2:
        raise InvalidArgument(f"multivariate gamma needs a > {(n - 1) / 2}, got {a}")
    j = np.arange(n)
    return n * (n - 1) / 4 * math.log(math.pi) + float(np.sum(gammaln(a - j / 2)))


def _factor(a, name, error=InvalidArgument):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.shape[0] != a.shape[1]:
        raise InvalidArgument(f"{name} must be square")
    if not np.allclose(a, a.T, rtol=1e-10, atol=1e-12 * max(1.0, np.abs(a).max())):
        raise InvalidArgument(f"{name} must be symmetric")
    try:
        return linalg.cholesky(symmetrize(a), lower=True)
    except (linalg.LinAlgError, ValueError):
        raise error(f"{name} is not positive definite") from None


@dataclass(frozen=True, eq=False)
class MatrixT:
    """``MT_{n,p}(M, Sigma, Omega; nu)`` with ``n x n`` row and ``p x p`` column scales."""

    M: np.ndarray
    Sigma: np.ndarray
    Omega: np.ndarray
    nu: float

    def __post_init__(self):
        M = np.atleast_2d(np.asarray(self.M, dtype=float))
        S = np.atleast_2d(np.asarray(self.Sigma, dtype=float))
        O = np.atleast_2d(np.asarray(self.Omega, dtype=float))
        if not self.nu > 0:
            raise InvalidArgument(f"nu must be > 0, got {self.nu}")
        if S.shape != (M.shape[0],) * 2 or O.shape != (M.shape[1],) * 2:
            raise InvalidArgument(
                f"scale shapes {S.shape}, {O.shape} do not match mean shape {M.shape}"
            )
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "Sigma", symmetrize(S))
        object.__setattr__(self, "Omega", symmetrize(O))
        object.__setattr__(self, "nu", float(self.nu))
        object.__setattr__(self, "_chol", (_factor(S, "Sigma"), _factor(O, "Omega")))

    @property
    def shape(self) -> tuple[int, int]:
        return self.M.shape

    @property
    def upsilon(self) -> float:
        n, p = self.shape
        return self.nu + n + p - 1

    def transpose(self) -> "MatrixT":
        return MatrixT(self.M.T, self.Omega, self.Sigma, self.nu)

    @property
    def T(self) -> "MatrixT":
        return self.transpose()

    def log_density(self, X) -> float:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape != self.shape:
            raise InvalidArgument(f"X has shape {X.shape}, expected {self.shape}")
        n, p = self.shape
        Ls, Lo = self._chol
        # G = Ls^{-1} E Lo^{-T}, so |I_n + Sigma^{-1} E Omega^{-1} E^T| = |I + G G^T|.
        G = solve_lower(Lo, solve_lower(Ls, X - self.M).T).T
        small = G.T @ G if p <= n else G @ G.T
        small[np.diag_indices_from(small)] += 1.0
        logdet_q = logdet_from_cholesky(linalg.cholesky(symmetrize(small), lower=True))
        ups = self.upsilon
        return (
            log_multigamma(ups / 2, n)
            - log_multigamma((self.nu + n - 1) / 2, n)
            - n * p / 2 * math.log(math.pi)
            - p / 2 * logdet_from_cholesky(Ls)
            - n / 2 * logdet_from_cholesky(Lo)
            - ups / 2 * logdet_q
        )

    def moments(self):
        """``(mean, cov(vec X^T))``; the covariance is ``None`` when ``nu <= 2``."""
        if self.nu <= 2:
            return self.M.copy(), None
        return self.M.copy(), np.kron(self.Sigma, self.Omega) / (self.nu - 2)

    def condition_rows(self, observed, x_obs) -> "MatrixT":
        """Law of the remaining rows given ``X[observed, :] = x_obs``.

        ``observed`` is a sequence of row indices; the result keeps the
        other rows in their original order.
        """
        n, _ = self.shape
        obs = _indices(observed, n, "row")
        rest = np.setdiff1d(np.arange(n), obs)
        if rest.size == 0:
            raise InvalidArgument("at least one row must remain unobserved")
        x_obs = np.atleast_2d(np.asarray(x_obs, dtype=float))
        if x_obs.shape != (obs.size, self.shape[1]):
            raise InvalidArgument(f"observed block has shape {x_obs.shape}")
        S = self.Sigma
        Lxx = _factor(S[np.ix_(obs, obs)], "Sigma_xx", NumericalFailure)
        S_yx = S[np.ix_(rest, obs)]
        E = x_obs - self.M[obs]
        W = linalg.cho_solve((Lxx, True), S_yx.T).T  # Sigma_yx Sigma_xx^{-1}
        mean = self.M[rest] + W @ E
        Sigma = S[np.ix_(rest, rest)] - W @ S_yx.T
        Z = solve_lower(Lxx, E)
        Omega = self.Omega + Z.T @ Z
        return MatrixT(mean, symmetrize(Sigma), symmetrize(Omega), self.nu + obs.size)

    def condition_cols(self, observed, x_obs) -> "MatrixT":
        """Law of the remaining columns given ``X[:, observed] = x_obs``."""
        x_obs = np.atleast_2d(np.asarray(x_obs, dtype=float))
        if x_obs.shape[0] != self.shape[0]:
            x_obs = x_obs.reshape(self.shape[0], -1)
        return self.transpose().condition_rows(observed, x_obs.T).transpose()


def _indices(idx, size, what):
    idx = np.atleast_1d(np.asarray(idx, dtype=int))
    if idx.size == 0 or np.any(idx < 0) or np.any(idx >= size) or np.unique(idx).size != idx.size:
        raise InvalidArgument(f"invalid {what} partition {idx.tolist()} for size {size}")
    return idx


def matrix_normal_log_density(X, M, U, V) -> float:
    """Log density of ``MN(M, U, V)`` (row covariance ``U``, column covariance ``V``)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    M = np.atleast_2d(np.asarray(M, dtype=float))
    n, p = X.shape
    Lu = _factor(U, "U")
    Lv = _factor(V, "V")
    G = solve_lower(Lv, solve_lower(Lu, X - M).T).T
    return float(
        -0.5 * np.sum(G * G)
        - n * p / 2 * math.log(2 * math.pi)
        - p / 2 * logdet_from_cholesky(Lu)
        - n / 2 * logdet_from_cholesky(Lv)
    )

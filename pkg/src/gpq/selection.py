"""Hyperparameter inference: marginal likelihood, its maximization, and HMC."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .errors import InvalidArgument, NumericalFailure
from .kernels import Kernel, as_points
from .linalg import cho_solve_lower, inverse_from_cholesky, jittered_cholesky, logdet_from_cholesky

logger = logging.getLogger(__name__)

LOG_BOUND = 20.0
_FAILED = 1e25


@dataclass(frozen=True)
class HyperVector:
    """Flattened ``(theta_K, noise)`` in optimizer coordinates.

    Positive hyperparameters are stored as logarithms, the rest (spectral
    mixture means) as-is. ``names`` follows the kernel layout with the noise
    standard deviation last under the name ``"noise"``.
    """

    values: np.ndarray
    names: tuple
    positive: tuple

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if not np.all(np.isfinite(v)):
            raise InvalidArgument(f"hyperparameters must be finite, got {v}")
        if not (len(v) == len(self.names) == len(self.positive)):
            raise InvalidArgument("hyperparameter layout is inconsistent")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_model(cls, kernel: Kernel, noise: float) -> "HyperVector":
        params = kernel.params()
        natural = [p.value for p in params] + [noise]
        positive = tuple(p.positive for p in params) + (True,)
        names = tuple(p.name for p in params) + ("noise",)
        for name, v, pos in zip(names, natural, positive):
            if pos and v <= 0:
                raise InvalidArgument(f"{name} = {v} cannot be represented in log space")
        values = [math.log(v) if pos else v for v, pos in zip(natural, positive)]
        return cls(np.array(values), names, positive)

    def natural(self) -> np.ndarray:
        return np.where(self.positive, np.exp(self.values), self.values)

    def to_model(self, kernel: Kernel) -> tuple[Kernel, float]:
        nat = self.natural()
        if kernel.n_params != len(nat) - 1:
            raise InvalidArgument("hyperparameter layout does not match the kernel")
        return kernel.with_values(nat[:-1]), float(nat[-1])

    def replace(self, values) -> "HyperVector":
        return HyperVector(np.asarray(values, dtype=float), self.names, self.positive)

    def as_dict(self) -> dict:
        return dict(zip(self.names, self.natural().tolist()))


def log_marginal_likelihood(X, y, kernel: Kernel, theta: HyperVector, *, with_grad=True):
    """Log evidence of ``y`` under ``N(0, K + noise^2 I)`` and its gradient.

    The gradient is taken with respect to ``theta.values``, i.e. through the
    log transform for positive entries.
    """
    X = as_points(X)
    y = np.asarray(y, dtype=float).ravel()
    n = y.size
    k, noise = theta.to_model(kernel)
    K = k(X)
    K[np.diag_indices_from(K)] += noise**2
    chol, _ = jittered_cholesky(K)
    alpha = cho_solve_lower(chol, y)
    value = -0.5 * y @ alpha - 0.5 * logdet_from_cholesky(chol) - 0.5 * n * math.log(2 * math.pi)
    if not with_grad:
        return value, None
    inner = np.outer(alpha, alpha) - inverse_from_cholesky(chol)
    dK = k.grad_theta(X) + [2.0 * noise * np.eye(n)]
    grad = np.array([0.5 * np.sum(inner * g) for g in dK])
    nat = theta.natural()
    grad = np.where(theta.positive, grad * nat, grad)
    return value, grad


def _bounds(theta: HyperVector, overrides):
    out = []
    for name, pos in zip(theta.names, theta.positive):
        lo, hi = (-LOG_BOUND, LOG_BOUND) if pos else (None, None)
        if overrides and name in overrides:
            blo, bhi = overrides[name]
            if pos:
                lo = math.log(blo) if blo is not None else lo
                hi = math.log(bhi) if bhi is not None else hi
            else:
                lo, hi = blo, bhi
        out.append((lo, hi))
    return out


def maximize_likelihood(
    X,
    y,
    kernel: Kernel,
    theta0: HyperVector,
    restarts: int = 5,
    seed=None,
    *,
    perturbation: float = 1.0,
    bounds: dict | None = None,
    fixed=(),
    maxiter: int = 200,
    gtol: float = 1e-6,
) -> HyperVector:
    """Multi-start quasi-Newton maximization of the log marginal likelihood.

    Restart 0 starts at ``theta0``; the others add uniform perturbations of
    ``+-perturbation`` (nats, for positive entries) to the free coordinates.
    ``bounds`` maps names to natural-unit ``(lo, hi)`` pairs and ``fixed``
    lists names held at their ``theta0`` value. The returned vector never
    scores below ``theta0``; ties resolve to the lowest restart index.
    """
    if restarts < 1:
        raise InvalidArgument("restarts must be >= 1")
    X = as_points(X)
    y = np.asarray(y, dtype=float).ravel()
    free = np.array([name not in set(fixed) for name in theta0.names])
    box = [b for b, f in zip(_bounds(theta0, bounds), free) if f]
    base = theta0.values.copy()

    def full(z):
        v = base.copy()
        v[free] = z
        return theta0.replace(v)

    def objective(z):
        try:
            val, grad = log_marginal_likelihood(X, y, kernel, full(z))
        except NumericalFailure:
            return _FAILED, np.zeros_like(z)
        if not np.isfinite(val) or not np.all(np.isfinite(grad)):
            return _FAILED, np.zeros_like(z)
        return -val, -grad[free]

    start_val = -objective(base[free])[0]
    candidates = []
    if start_val > -_FAILED:
        candidates.append((start_val, -1, base[free].copy()))
    rng = np.random.default_rng(seed)
    for r in range(restarts):
        z0 = base[free].copy()
        if r > 0:
            z0 = z0 + rng.uniform(-perturbation, perturbation, size=z0.size)
        z0 = np.array([np.clip(v, lo if lo is not None else -np.inf, hi if hi is not None else np.inf)
                       for v, (lo, hi) in zip(z0, box)])
        if not free.any():
            break
        res = optimize.minimize(
            objective, z0, jac=True, method="L-BFGS-B", bounds=box,
            options={"maxiter": maxiter, "gtol": gtol},
        )
        val = -res.fun
        if val > -_FAILED and np.all(np.isfinite(res.x)):
            candidates.append((val, r, res.x.copy()))
        logger.debug("restart %d: lml=%.6g (%s)", r, val, res.message)
    if not candidates:
        raise NumericalFailure("every likelihood restart failed numerically")
    best = max(candidates, key=lambda c: (c[0], -c[1]))
    return full(best[2])


# ---------------------------------------------------------------------------
# Hamiltonian Monte Carlo
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HmcSettings:
    step_size: float = 0.05
    n_leapfrog: int = 20
    n_samples: int = 1000
    burn_in: int = 500
    thin: int = 1
    seed: int | None = None

    def __post_init__(self):
        if not self.step_size > 0:
            raise InvalidArgument("step_size must be > 0")
        if self.n_leapfrog < 1 or self.thin < 1:
            raise InvalidArgument("n_leapfrog and thin must be >= 1")
        if self.n_samples < 0 or self.burn_in < 0:
            raise InvalidArgument("sample counts must be >= 0")


def leapfrog(grad_log_density, q, p, step_size, n_steps):
    """Integrate Hamilton's equations for ``V = -log pi``, unit mass."""
    q = np.array(q, dtype=float)
    p = np.array(p, dtype=float)
    p = p + 0.5 * step_size * grad_log_density(q)
    for i in range(n_steps):
        q = q + step_size * p
        g = grad_log_density(q)
        p = p + (step_size if i < n_steps - 1 else 0.5 * step_size) * g
    return q, p


def _checked(log_density, q):
    val, grad = log_density(q)
    grad = np.asarray(grad, dtype=float)
    if not np.isfinite(val) or not np.all(np.isfinite(grad)):
        raise NumericalFailure(f"non-finite log density or gradient at {q!r}", position=np.copy(q))
    return float(val), grad


def hmc_transition(log_density, q, rng, step_size, n_leapfrog, current=None):
    """One HMC proposal plus Metropolis correction.

    Returns ``(q_next, logp_next, grad_next, accept_prob)``.
    """
    logp, grad = current if current is not None else _checked(log_density, q)
    p0 = rng.standard_normal(q.shape)
    h0 = -logp + 0.5 * p0 @ p0

    cache = {}

    def grad_fn(x):
        val, g = _checked(log_density, x)
        cache["last"] = (val, g)
        return g

    q1, p1 = leapfrog(grad_fn, q, p0, step_size, n_leapfrog)
    logp1, grad1 = cache["last"]
    h1 = -logp1 + 0.5 * p1 @ p1
    accept = 1.0 if h1 <= h0 else math.exp(h0 - h1)
    if rng.uniform() < accept:
        return q1, logp1, grad1, accept
    return q, logp, grad, accept


def hmc_sample(log_density, q0, settings: HmcSettings = HmcSettings()) -> np.ndarray:
    """Draw ``settings.n_samples`` post-burn-in states of an HMC chain.

    ``log_density(q)`` returns ``(log pi(q), grad log pi(q))`` up to an
    additive constant.
    """
    rng = np.random.default_rng(settings.seed)
    q = np.atleast_1d(np.asarray(q0, dtype=float)).copy()
    state = _checked(log_density, q)
    out = np.empty((settings.n_samples, q.size))
    probs = []
    total = settings.burn_in + settings.n_samples * settings.thin
    kept = 0
    for it in range(total):
        q, logp, grad, acc = hmc_transition(
            log_density, q, rng, settings.step_size, settings.n_leapfrog, state
        )
        state = (logp, grad)
        probs.append(acc)
        if it >= settings.burn_in and (it - settings.burn_in) % settings.thin == 0:
            out[kept] = q
            kept += 1
    logger.info("hmc mean acceptance %.3f over %d proposals", np.mean(probs or [0]), total)
    return out


def hyperparameter_log_posterior(X, y, kernel: Kernel, template: HyperVector):
    """Log posterior over ``theta.values`` with independent N(0, 1) priors."""

    def log_density(values):
        theta = template.replace(values)
        try:
            val, grad = log_marginal_likelihood(X, y, kernel, theta)
        except NumericalFailure:
            return -np.inf, np.full(len(values), np.nan)
        return val - 0.5 * values @ values, grad - values

    return log_density


def sample_hyperparameters(X, y, kernel: Kernel, theta0: HyperVector, settings: HmcSettings):
    """HMC draws of ``theta`` (optimizer coordinates) under the standard-normal prior."""
    return hmc_sample(hyperparameter_log_posterior(X, y, kernel, theta0), theta0.values, settings)

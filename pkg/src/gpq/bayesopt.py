"""Bayesian optimization over a box with a GP surrogate.

The surrogate works on inputs rescaled to the unit cube and targets
standardized to zero mean and unit variance; every public function takes
and returns values in the caller's units.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.special import ndtr
from scipy.stats import qmc

from .errors import InvalidArgument, NumericalFailure
from .gp import GpModel, fit, posterior_mean_var
from .kernels import Kernel, SquaredExponential
from .selection import HyperVector, maximize_likelihood

logger = logging.getLogger(__name__)

ACQUISITIONS = ("ei", "pi", "kg")
DIRECTIONS = ("maximize", "minimize")
NOISE_FLOOR = 1e-8
LATTICE_PER_DIM = 256
KG_LATTICE = 512
SEARCH_EVALS = 200
DUPLICATE_TOL = 1e-9
_DEGENERATE_VAR = 1e-12
_DEGENERATE_GAIN = 1e-6


def expected_positive_part(mu, sigma, c):
    """``E[(X - c)^+]`` for ``X ~ N(mu, sigma^2)``; ``sigma = 0`` gives ``max(mu - c, 0)``."""
    mu, sigma, c = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (mu, sigma, c)))
    if np.any(sigma < 0):
        raise InvalidArgument("sigma must be >= 0")
    diff = np.atleast_1d(mu - c)
    sigma = np.atleast_1d(sigma)
    out = np.maximum(diff, 0.0)
    pos = sigma > 0
    if np.any(pos):
        with np.errstate(over="ignore"):
            z = diff[pos] / sigma[pos]
            pdf = np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
        out[pos] = np.maximum(diff[pos] * ndtr(z) + sigma[pos] * pdf, 0.0)
    return out.reshape(mu.shape) if mu.ndim else float(out[0])


def forrester(x):
    """``(6x - 2)^2 sin(12x - 4)``, minimized near x = 0.757 on [0, 1]."""
    x = np.asarray(x, dtype=float)
    return (6 * x - 2) ** 2 * np.sin(12 * x - 4)


@dataclass(frozen=True, eq=False)
class BoState:
    """Evaluated samples plus the surrogate fitted to them."""

    X: np.ndarray
    y: np.ndarray
    domain: np.ndarray
    model: GpModel
    theta: HyperVector
    direction: str = "maximize"
    acquisition: str = "ei"
    xi: float = 0.0
    y_mean: float = 0.0
    y_scale: float = 1.0

    @property
    def sign(self) -> float:
        return 1.0 if self.direction == "maximize" else -1.0

    @property
    def incumbent(self) -> tuple[np.ndarray, float]:
        i = int(np.argmax(self.sign * self.y))
        return self.X[i].copy(), float(self.y[i])

    @property
    def threshold(self) -> float:
        return self.incumbent[1] + self.sign * self.xi

    def to_unit(self, X):
        lo, hi = self.domain[:, 0], self.domain[:, 1]
        return (np.atleast_2d(X) - lo) / (hi - lo)

    def from_unit(self, U):
        lo, hi = self.domain[:, 0], self.domain[:, 1]
        return lo + np.atleast_2d(U) * (hi - lo)


def _check_domain(domain):
    domain = np.atleast_2d(np.asarray(domain, dtype=float))
    if domain.shape[1] != 2 or np.any(domain[:, 1] <= domain[:, 0]):
        raise InvalidArgument("domain must be a (d, 2) array of [lo, hi] with lo < hi")
    return domain


def default_kernel(d: int) -> Kernel:
    return SquaredExponential(1.0, (0.2,) * d)


def _surrogate_bounds(theta: HyperVector, noise_floor):
    out = {}
    for name in theta.names:
        leaf = name.rsplit(".", 1)[-1]
        if name == "noise":
            out[name] = (noise_floor, 1.0)
        elif leaf == "sigma":
            out[name] = (0.05, 20.0)
        elif leaf == "l" or leaf.startswith("l["):
            out[name] = (0.01, 10.0)
    return out


def build_state(
    X,
    y,
    domain,
    *,
    direction="maximize",
    acquisition="ei",
    xi=0.0,
    kernel: Kernel | None = None,
    noise: float = 1e-3,
    theta: HyperVector | None = None,
    optimize: bool = True,
    restarts: int = 3,
    noise_floor: float = NOISE_FLOOR,
    seed=None,
) -> BoState:
    """Fit the surrogate to ``(X, y)``.

    With ``optimize=True`` the hyperparameters are re-estimated by maximum
    likelihood starting from ``theta`` (or from ``kernel``/``noise``);
    otherwise they are used as given.
    """
    if direction not in DIRECTIONS:
        raise InvalidArgument(f"direction must be one of {DIRECTIONS}")
    if acquisition not in ACQUISITIONS:
        raise InvalidArgument(f"acquisition must be one of {ACQUISITIONS}")
    if xi < 0:
        raise InvalidArgument("xi must be >= 0")
    domain = _check_domain(domain)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[1] != domain.shape[0] or X.shape[0] != y.size or y.size < 1:
        raise InvalidArgument("samples do not match the domain")
    if np.any(X < domain[:, 0] - 1e-12) or np.any(X > domain[:, 1] + 1e-12):
        raise InvalidArgument("samples lie outside the domain")
    kernel = kernel or default_kernel(domain.shape[0])
    y_mean = float(y.mean())
    y_scale = float(y.std()) or 1.0
    ys = (y - y_mean) / y_scale
    U = (X - domain[:, 0]) / (domain[:, 1] - domain[:, 0])
    if theta is None:
        theta = HyperVector.from_model(kernel, max(noise, noise_floor) if optimize else noise)
    if optimize:
        theta = maximize_likelihood(
            U, ys, kernel, theta, restarts=restarts, seed=seed,
            bounds=_surrogate_bounds(theta, noise_floor),
        )
    k, s = theta.to_model(kernel)
    model = fit(U, ys, k, s)
    return BoState(X, y, domain, model, theta, direction, acquisition, float(xi), y_mean, y_scale)


def _moments_unit(state: BoState, U):
    """Standardized posterior mean/variance at unit-cube points."""
    mean, var = posterior_mean_var(state.model, U)
    prior = state.model.kernel.diag(U)
    var = np.where(var <= _DEGENERATE_VAR * np.maximum(prior, 1e-300), 0.0, var)
    return mean, var


def predict(state: BoState, Xs):
    """Posterior mean and standard deviation of ``f`` in original units."""
    mean, var = _moments_unit(state, state.to_unit(Xs))
    return state.y_mean + state.y_scale * mean, state.y_scale * np.sqrt(var)


def _improvement(state: BoState, mean, std):
    """EI and PI from original-unit moments, per the state's direction."""
    tau = state.threshold
    gain = state.sign * (mean - tau)  # positive = improvement
    ei = expected_positive_part(gain, std, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        # a zero-variance point is an evaluated one; round-off in its mean is not an improvement
        flat = (gain > _DEGENERATE_GAIN * state.y_scale).astype(float)
        pi = np.where(std > 0, ndtr(gain / np.where(std > 0, std, 1.0)), flat)
    return np.atleast_1d(ei), np.atleast_1d(pi)


def acquisition(state: BoState, Xs, *, n_s: int = 32, seed=0):
    """Value of the state's acquisition at one point or an ``(n, d)`` batch."""
    X = np.atleast_2d(np.asarray(Xs, dtype=float))
    single = np.ndim(Xs) <= 1
    if state.acquisition == "kg":
        vals = np.array([knowledge_gradient(state, x, n_s, seed) for x in X])
    else:
        mean, std = predict(state, X)
        ei, pi = _improvement(state, mean, std)
        vals = ei if state.acquisition == "ei" else pi
    return float(vals[0]) if single else vals


def _sobol(d, n, seed):
    m = max(1, math.ceil(math.log2(n)))
    return qmc.Sobol(d, scramble=True, seed=seed).random_base2(m)[:n]


def _compass_search(f, u0, step, max_evals, lower=0.0, upper=1.0):
    """Maximize ``f`` over the unit box by coordinate pattern search."""
    u = np.clip(np.array(u0, dtype=float), lower, upper)
    best = f(u)
    evals = 1
    d = u.size
    while evals < max_evals and step > 1e-9:
        moved = False
        for j in range(d):
            for sgn in (1.0, -1.0):
                cand = u.copy()
                cand[j] = np.clip(cand[j] + sgn * step, lower, upper)
                if np.array_equal(cand, u):
                    continue
                val = f(cand)
                evals += 1
                if val > best:
                    u, best, moved = cand, val, True
                    break
                if evals >= max_evals:
                    return u, best
            if moved:
                break
        if not moved:
            step *= 0.5
    return u, best


# ---------------------------------------------------------------------------
# knowledge gradient
# ---------------------------------------------------------------------------


def _max_mean(model: GpModel, sign, candidates, refine: bool, evals=50):
    mean = sign * posterior_mean_var(model, candidates)[0]
    i = int(np.argmax(mean))
    best = mean[i]
    if refine:
        f = lambda u: float(sign * posterior_mean_var(model, u[None, :])[0][0])
        _, val = _compass_search(f, candidates[i], 1.0 / KG_LATTICE ** (1.0 / candidates.shape[1]), evals)
        best = max(best, val)
    return float(best)


def knowledge_gradient_samples(state: BoState, x, n_s: int, seed=None, *, restrict=False):
    """Per-draw gains ``Delta_(s)`` of the simulation estimator, original units.

    ``restrict=True`` limits both inner maximizations to the evaluated
    points (plus ``x`` after augmentation) instead of the whole box.
    """
    if n_s < 1:
        raise InvalidArgument("n_s must be >= 1")
    sign = state.sign
    u = state.to_unit(np.asarray(x, dtype=float))[0]
    U = state.to_unit(state.X)
    model = state.model
    if restrict:
        base = U
    else:
        base = np.vstack([_sobol(U.shape[1], KG_LATTICE, 0), U])
    best_now = _max_mean(model, sign, base, refine=not restrict)

    m_x, v_x = _moments_unit(state, u[None, :])
    rng = np.random.default_rng(seed)
    X_aug = np.vstack([U, u])
    candidates = np.vstack([base, u])
    deltas = []
    attempts = 0
    while len(deltas) < n_s:
        attempts += 1
        if attempts > 10 * n_s:
            raise NumericalFailure("augmented surrogate failed too often while estimating KG")
        y_star = m_x[0] + math.sqrt(v_x[0]) * rng.standard_normal()
        try:
            aug = fit(X_aug, np.append(model.y, y_star), model.kernel, model.noise)
        except NumericalFailure:
            continue
        best_next = _max_mean(aug, sign, candidates, refine=not restrict)
        deltas.append((best_next - best_now) * state.y_scale)
    return np.array(deltas)


def knowledge_gradient(state: BoState, x, n_s: int = 32, seed=None, *, restrict=False) -> float:
    return float(np.mean(knowledge_gradient_samples(state, x, n_s, seed, restrict=restrict)))


# ---------------------------------------------------------------------------
# proposal and main loop
# ---------------------------------------------------------------------------


def propose_next(state: BoState, restarts: int = 5, seed=None, *, kg_samples: int = 16):
    """Maximize the acquisition over the box.

    A scrambled Sobol lattice of ``256 * d`` points seeds ``restarts``
    pattern searches of 200 evaluations each. When the acquisition is zero
    on the whole lattice, or the winner duplicates an evaluated point, the
    lattice point of largest posterior variance is returned instead.
    """
    d = state.domain.shape[0]
    lattice = _sobol(d, LATTICE_PER_DIM * d, seed)

    if state.acquisition == "kg":
        kg_seed = int(np.random.default_rng(seed).integers(2**31))
        f = lambda U: np.array(
            [knowledge_gradient(state, state.from_unit(u)[0], kg_samples, kg_seed) for u in U]
        )
    else:
        f = lambda U: acquisition(state, state.from_unit(U))

    values = f(lattice)
    _, var = _moments_unit(state, lattice)
    fallback = state.from_unit(lattice[int(np.argmax(var))])[0]
    if not np.max(values) > 0:
        logger.debug("acquisition vanishes on the lattice; exploring")
        return fallback

    order = np.argsort(-values, kind="stable")[: max(1, restarts)]
    step = 1.0 / (LATTICE_PER_DIM * d) ** (1.0 / d)
    best_u, best_v = lattice[order[0]], values[order[0]]
    for i in order:
        u, v = _compass_search(lambda z: float(f(z[None, :])[0]), lattice[i], 2 * step, SEARCH_EVALS)
        if v > best_v:
            best_u, best_v = u, v
    x = state.from_unit(best_u)[0]
    x = np.clip(x, state.domain[:, 0], state.domain[:, 1])
    if np.min(np.max(np.abs(state.X - x), axis=1)) < DUPLICATE_TOL:
        return fallback
    return x


@dataclass
class BoSettings:
    budget: int = 15
    n_init: int | None = None
    acquisition: str = "ei"
    direction: str = "maximize"
    xi: float = 0.0
    kernel: Kernel | None = None
    noise: float = 1e-3
    restarts: int = 5
    lml_restarts: int = 3
    kg_samples: int = 16
    seed: int | None = None
    initial_X: np.ndarray | None = None


@dataclass
class BoRecord:
    iteration: int
    x: np.ndarray
    y: float
    incumbent_x: np.ndarray
    incumbent_y: float
    acquisition_max: float


@dataclass
class BoResult:
    best_x: np.ndarray
    best_y: float
    history: list = field(default_factory=list)
    theta: HyperVector | None = None


class BoAborted(RuntimeError):
    """The objective raised; ``history`` holds every completed evaluation."""

    def __init__(self, message, history):
        self.history = history
        super().__init__(message)


def run_bo(objective: Callable, domain, settings: BoSettings = BoSettings()) -> BoResult:
    """Initial quasi-random design, then propose / evaluate / refit until the budget is spent.

    ``budget`` counts every objective evaluation including the initial
    design. Surrogate hyperparameters are re-estimated at every iteration.
    """
    domain = _check_domain(domain)
    d = domain.shape[0]
    if settings.budget < 1:
        raise InvalidArgument("budget must be >= 1")
    n_init = settings.n_init if settings.n_init is not None else max(3, 2 * d)
    if n_init < 1:
        raise InvalidArgument("initial design size must be >= 1")
    n_init = min(n_init, settings.budget)
    sign = 1.0 if settings.direction == "maximize" else -1.0
    rng = np.random.default_rng(settings.seed)

    if settings.initial_X is not None:
        init = np.atleast_2d(np.asarray(settings.initial_X, dtype=float))
    else:
        init = domain[:, 0] + _sobol(d, n_init, int(rng.integers(2**31))) * (
            domain[:, 1] - domain[:, 0]
        )
    X, y, history = [], [], []

    def evaluate(x, it, acq):
        try:
            val = float(np.asarray(objective(x), dtype=float).squeeze())
        except Exception as exc:
            raise BoAborted(f"objective failed at iteration {it}: {exc}", history) from exc
        X.append(np.array(x, dtype=float))
        y.append(val)
        best = int(np.argmax(sign * np.array(y)))
        history.append(BoRecord(it, X[-1], val, X[best].copy(), y[best], acq))

    for i, x in enumerate(init):
        evaluate(x, i, float("nan"))

    theta = None
    while len(y) < settings.budget:
        state = build_state(
            np.array(X), np.array(y), domain,
            direction=settings.direction, acquisition=settings.acquisition, xi=settings.xi,
            kernel=settings.kernel, noise=settings.noise, theta=theta,
            restarts=settings.lml_restarts, seed=int(rng.integers(2**31)),
        )
        theta = state.theta
        x_next = propose_next(
            state, settings.restarts, int(rng.integers(2**31)), kg_samples=settings.kg_samples
        )
        if settings.acquisition == "kg":
            acq = knowledge_gradient(state, x_next, settings.kg_samples, 0)
        else:
            acq = acquisition(state, x_next)
        evaluate(x_next, len(y), acq)

    last = history[-1]
    return BoResult(last.incumbent_x, last.incumbent_y, history, theta)

"""Trend-following backtests, performance statistics and the Hurst exponent.

Time is measured in trading days: a month is 21 days and a year 252. Window
lengths are given in months. Weights chosen at the close of day ``t`` earn
the simple returns of day ``t + 1`` onward and are held constant until the
next rebalance.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .admm import AdmmSettings, AllocationProblem, solve_allocation
from .bayesopt import BoSettings, run_bo
from .errors import DataError, GpqError, InvalidArgument, WindowError

logger = logging.getLogger(__name__)

DAYS_PER_MONTH = 21
DAYS_PER_YEAR = 252
REBALANCE_DAYS = {"monthly": 21, "weekly": 5}


@dataclass(frozen=True, eq=False)
class PricePanel:
    """Daily prices, one column per asset; NaN marks days outside an asset's live range."""

    dates: np.ndarray
    assets: tuple
    prices: np.ndarray

    def __post_init__(self):
        dates = np.asarray(self.dates)
        prices = np.atleast_2d(np.asarray(self.prices, dtype=float))
        assets = tuple(str(a) for a in self.assets)
        if prices.shape != (dates.size, len(assets)):
            raise DataError(
                f"price matrix {prices.shape} does not match {dates.size} dates x {len(assets)} assets"
            )
        if dates.size > 1 and not np.all(dates[1:] > dates[:-1]):
            row = int(np.argmin(dates[1:] > dates[:-1])) + 1
            raise DataError("dates are not strictly increasing", row=row)
        finite = np.isfinite(prices)
        if np.any(prices[finite] <= 0):
            raise DataError("prices must be strictly positive")
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "assets", assets)
        object.__setattr__(self, "prices", prices)

    @property
    def n_days(self) -> int:
        return self.prices.shape[0]

    @property
    def n_assets(self) -> int:
        return self.prices.shape[1]

    def returns(self) -> np.ndarray:
        """Simple daily returns; row ``t`` is the return from day ``t`` to ``t + 1``."""
        return self.prices[1:] / self.prices[:-1] - 1.0

    def index_of(self, t) -> int:
        if isinstance(t, (int, np.integer)):
            if not 0 <= t < self.n_days:
                raise InvalidArgument(f"day index {t} outside the panel")
            return int(t)
        hits = np.flatnonzero(self.dates == np.asarray(t, dtype=self.dates.dtype))
        if hits.size == 0:
            raise InvalidArgument(f"date {t} not in the panel")
        return int(hits[0])

    def subset(self, columns) -> "PricePanel":
        columns = list(columns)
        return PricePanel(self.dates, tuple(self.assets[i] for i in columns), self.prices[:, columns])


def _window_prices(panel: PricePanel, t: int, days: int, assets, what: str):
    if t - days < 0:
        raise WindowError(f"{what} needs {days} days of history before day {t}")
    block = panel.prices[t - days : t + 1][:, assets]
    bad = ~np.all(np.isfinite(block), axis=0)
    if np.any(bad):
        name = panel.assets[assets[int(np.argmax(bad))]]
        raise WindowError(f"{what}: asset {name} has no prices over the {days}-day window ending at day {t}")
    return block


def _assets(panel, assets):
    return list(range(panel.n_assets)) if assets is None else list(assets)


def trend_estimate(panel: PricePanel, t, ell_mu: int, assets=None) -> np.ndarray:
    """Total return ``P_t / P_{t - 21 ell_mu} - 1`` per asset."""
    t = panel.index_of(t)
    if ell_mu < 1:
        raise InvalidArgument("ell_mu must be >= 1 month")
    block = _window_prices(panel, t, DAYS_PER_MONTH * int(ell_mu), _assets(panel, assets), "trend")
    return block[-1] / block[0] - 1.0


def covariance_estimate(panel: PricePanel, t, ell_sigma: int, horizon_days: int = DAYS_PER_MONTH,
                        assets=None) -> np.ndarray:
    """Sample covariance of the last ``21 ell_sigma`` daily returns, times ``horizon_days``."""
    t = panel.index_of(t)
    if ell_sigma < 1:
        raise InvalidArgument("ell_sigma must be >= 1 month")
    block = _window_prices(panel, t, DAYS_PER_MONTH * int(ell_sigma), _assets(panel, assets), "covariance")
    rets = block[1:] / block[:-1] - 1.0
    cov = np.atleast_2d(np.cov(rets, rowvar=False, ddof=1))
    return 0.5 * (cov + cov.T) * horizon_days


@dataclass(frozen=True)
class Hyper:
    """One hyperparameter set; the window lengths are whole months."""

    lam: float
    ell_mu: int
    ell_sigma: int

    @classmethod
    def floored(cls, lam, ell_mu, ell_sigma) -> "Hyper":
        return cls(float(lam), int(math.floor(ell_mu)), int(math.floor(ell_sigma)))


@dataclass
class StrategyConfig:
    frequency: str = "monthly"
    sigma_bar: float = 0.05
    mode: str = "fixed"
    lam: float = 0.1
    ell_mu: int = 12
    ell_sigma: int = 6
    bo_budget: int = 30
    lam_bounds: tuple = (0.01, 2.0)
    ell_mu_bounds: tuple = (3.0, 24.0)
    ell_sigma_bounds: tuple = (3.0, 12.0)
    lookback_years: int = 2
    top_k: int = 3
    start: int | None = None
    admm: AdmmSettings = field(default_factory=lambda: AdmmSettings(phi=None))

    def __post_init__(self):
        if self.frequency not in REBALANCE_DAYS:
            raise InvalidArgument(f"frequency must be one of {sorted(REBALANCE_DAYS)}")
        if self.mode not in ("fixed", "online"):
            raise InvalidArgument("mode must be 'fixed' or 'online'")
        if not self.sigma_bar > 0:
            raise InvalidArgument("sigma_bar must be > 0")
        for name in ("lam_bounds", "ell_mu_bounds", "ell_sigma_bounds"):
            lo, hi = getattr(self, name)
            if not 0 < lo < hi:
                raise InvalidArgument(f"{name} must satisfy 0 < lo < hi")
        if self.ell_mu_bounds[0] < 1 or self.ell_sigma_bounds[0] < 1:
            raise InvalidArgument("window bounds must be at least one month")
        if self.top_k < 1 or self.bo_budget < 1:
            raise InvalidArgument("top_k and bo_budget must be >= 1")

    @property
    def horizon_days(self) -> int:
        return REBALANCE_DAYS[self.frequency]

    @property
    def period_sigma_bar(self) -> float:
        """Annual target volatility rescaled to the rebalancing horizon."""
        return self.sigma_bar * math.sqrt(self.horizon_days / DAYS_PER_YEAR)

    @property
    def lookback_days(self) -> int:
        return self.lookback_years * DAYS_PER_YEAR

    def min_start(self) -> int:
        if self.mode == "fixed":
            return DAYS_PER_MONTH * max(self.ell_mu, self.ell_sigma)
        longest = max(math.floor(self.ell_mu_bounds[1]), math.floor(self.ell_sigma_bounds[1]))
        return DAYS_PER_MONTH * longest + self.lookback_days


def allocate(panel: PricePanel, t: int, hyper: Hyper, x_prev, config: StrategyConfig):
    """Weights at day ``t`` for one hyperparameter set.

    Assets without prices over the longest window get zero weight.
    Returns ``(x, diagnostics or None)``.
    """
    days = DAYS_PER_MONTH * max(hyper.ell_mu, hyper.ell_sigma)
    if t - days < 0:
        raise WindowError(f"day {t} has fewer than {days} days of history")
    live = np.flatnonzero(np.all(np.isfinite(panel.prices[t - days : t + 1]), axis=0))
    x = np.zeros(panel.n_assets)
    if live.size == 0:
        return x, None
    mu = trend_estimate(panel, t, hyper.ell_mu, live)
    cov = covariance_estimate(panel, t, hyper.ell_sigma, config.horizon_days, live)
    problem = AllocationProblem(mu, cov, hyper.lam, np.asarray(x_prev)[live], config.period_sigma_bar)
    x_live, diag = solve_allocation(problem, config.admm)
    x[live] = x_live
    return x, diag


def _simulate(panel, start, end, choose, config, on_rebalance=None):
    """Hold weights from ``choose(t, x_prev)`` between rebalances over days ``start..end``.

    Returns the daily strategy returns for days ``start + 1 .. end``.
    """
    rets = panel.returns()
    h = config.horizon_days
    x = np.zeros(panel.n_assets)
    out = np.empty(end - start)
    for t in range(start, end):
        if (t - start) % h == 0:
            x = choose(t, x)
            if on_rebalance is not None:
                on_rebalance(t, x)
        r = rets[t]
        out[t - start] = float(np.sum(np.where(np.isfinite(r), r, 0.0) * x))
    return out


@dataclass
class HyperRecord:
    day: int
    date: object
    chosen: tuple
    scores: tuple


@dataclass
class BacktestResult:
    dates: np.ndarray
    returns: np.ndarray
    nav: np.ndarray
    rebalance_days: list
    weights: np.ndarray
    hyper_trace: list
    summary: dict

    @property
    def cumulative_return(self) -> float:
        return float(self.nav[-1] - 1.0) if self.nav.size else 0.0


def _nav(returns):
    return np.cumprod(1.0 + np.asarray(returns, dtype=float))


def _result(panel, start, returns, rebal, weights, trace):
    nav = _nav(returns)
    summary = performance_stats(returns) if len(returns) >= 2 else {}
    W = np.array(weights) if weights else np.zeros((0, panel.n_assets))
    return BacktestResult(panel.dates[start + 1 : start + 1 + len(returns)], np.asarray(returns), nav,
                          list(rebal), W, list(trace), summary)


def sub_backtest_return(panel: PricePanel, t: int, hyper: Hyper, config: StrategyConfig) -> float:
    """Cumulative return of the fixed-hyperparameter strategy over the lookback ending at ``t``."""
    start = t - config.lookback_days
    rets = _simulate(panel, start, t, lambda s, xp: allocate(panel, s, hyper, xp, config)[0], config)
    return float(np.prod(1.0 + rets) - 1.0)


def run_backtest(panel: PricePanel, config: StrategyConfig, seed=None, end=None) -> BacktestResult:
    """Backtest from ``config.start`` (or the earliest admissible day) to ``end``.

    In online mode every rebalance runs a Bayesian optimization of the
    lookback cumulative return over ``(lam, ell_mu, ell_sigma)``, floors the
    window lengths, and averages the weights of the ``top_k`` best evaluated
    sets. On a solver or data error the exception gets a ``partial``
    attribute with the result accumulated so far.
    """
    start = config.min_start() if config.start is None else int(config.start)
    if start < config.min_start():
        raise WindowError(f"start day {start} is before the first admissible day {config.min_start()}")
    end = panel.n_days - 1 if end is None else int(end)
    if end <= start:
        raise WindowError(
            f"panel has {panel.n_days} days but the strategy needs more than {start} of history"
        )
    seeds = np.random.SeedSequence(seed)
    rebal, weights, trace = [], [], []
    cache = {}

    def objective_at(t):
        def objective(v):
            hyper = Hyper.floored(*v)
            key = (t, hyper)
            if key not in cache:
                cache[key] = sub_backtest_return(panel, t, hyper, config)
            return cache[key]
        return objective

    def choose(t, x_prev):
        if config.mode == "fixed":
            hyper = Hyper(config.lam, int(config.ell_mu), int(config.ell_sigma))
            x, _ = allocate(panel, t, hyper, x_prev, config)
            trace.append(HyperRecord(t, panel.dates[t], (hyper,), ()))
            return x
        domain = [config.lam_bounds, config.ell_mu_bounds, config.ell_sigma_bounds]
        child = seeds.spawn(1)[0]
        bo = run_bo(
            objective_at(t), domain,
            BoSettings(budget=config.bo_budget, direction="maximize",
                       seed=int(child.generate_state(1)[0])),
        )
        ranked = sorted(bo.history, key=lambda h: (-h.y, h.iteration))[: config.top_k]
        chosen = tuple(Hyper.floored(*h.x) for h in ranked)
        xs = [allocate(panel, t, hyper, x_prev, config)[0] for hyper in chosen]
        trace.append(HyperRecord(t, panel.dates[t], chosen, tuple(h.y for h in ranked)))
        return np.mean(xs, axis=0)

    def record(t, x):
        rebal.append(t)
        weights.append(x.copy())

    try:
        returns = _simulate(panel, start, end, choose, config, record)
    except GpqError as exc:
        exc.partial = _result(panel, start, [], rebal, weights, trace)
        raise
    return _result(panel, start, returns, rebal, weights, trace)


def performance_stats(returns) -> dict:
    """Annualized geometric return and volatility, Sharpe ratio (zero rate) and maximum drawdown.

    The drawdown is reported as a non-positive fraction of the running peak,
    with the curve starting at 1 before the first return.
    """
    r = np.asarray(returns, dtype=float).ravel()
    if r.size < 2:
        raise InvalidArgument("need at least two returns")
    nav = np.concatenate([[1.0], _nav(r)])
    growth = nav[-1]
    ann_return = growth ** (DAYS_PER_YEAR / r.size) - 1.0 if growth > 0 else -1.0
    ann_vol = float(np.std(r, ddof=1) * math.sqrt(DAYS_PER_YEAR))
    sharpe = ann_return / ann_vol if ann_vol > 0 else 0.0
    mdd = float(np.min(nav / np.maximum.accumulate(nav) - 1.0))
    return {"sharpe": float(sharpe), "ann_return": float(ann_return), "ann_vol": ann_vol, "mdd": mdd}


# ---------------------------------------------------------------------------
# Hurst exponent
# ---------------------------------------------------------------------------


def expected_rescaled_range(n: int) -> float:
    """Anis-Lloyd-Peters expectation of R/S for ``n`` iid normal increments."""
    i = np.arange(1, n)
    tail = float(np.sum(np.sqrt((n - i) / i)))
    if n <= 340:
        front = math.exp(gammaln((n - 1) / 2) - gammaln(n / 2)) / math.sqrt(math.pi)
    else:
        front = 1.0 / math.sqrt(n * math.pi / 2)
    return (n - 0.5) / n * front * tail


def hurst_exponent(series, min_block: int = 8, max_block: int | None = None, *, corrected=True) -> float:
    """Rescaled-range estimate of the Hurst exponent of a level series.

    R/S is averaged over non-overlapping blocks of the increments for block
    sizes ``min_block, 2 min_block, ...`` up to ``max_block`` (default half
    the sample) and ``H`` is the least-squares slope of ``log R/S`` against
    ``log`` block size. With ``corrected=True`` the Anis-Lloyd-Peters
    expectation is subtracted and 0.5 added back, which removes most of the
    small-block upward bias for memoryless series.
    """
    x = np.asarray(series, dtype=float).ravel()
    if x.size < 64:
        raise InvalidArgument("Hurst estimation needs at least 64 observations")
    if not np.all(np.isfinite(x)):
        raise DataError("series contains non-finite values")
    inc = np.diff(x)
    if np.all(inc == inc[0]):
        raise DataError("Hurst exponent is undefined when the increments are constant")
    if min_block < 4:
        raise InvalidArgument("min_block must be >= 4")
    n = inc.size
    max_block = n // 2 if max_block is None else min(int(max_block), n)
    sizes, rs = [], []
    b = int(min_block)
    while b <= max_block:
        k = n // b
        blocks = inc[: k * b].reshape(k, b)
        dev = np.cumsum(blocks - blocks.mean(axis=1, keepdims=True), axis=1)
        R = dev.max(axis=1) - dev.min(axis=1)
        S = blocks.std(axis=1)
        ok = S > 0
        if np.any(ok):
            sizes.append(b)
            rs.append(float(np.mean(R[ok] / S[ok])))
        b *= 2
    if len(sizes) < 2:
        raise InvalidArgument("need at least two block sizes with non-zero dispersion")
    y = np.log(rs)
    if corrected:
        y = y - np.log([expected_rescaled_range(s) for s in sizes])
    slope = float(np.polyfit(np.log(sizes), y, 1)[0])
    return slope + 0.5 if corrected else slope

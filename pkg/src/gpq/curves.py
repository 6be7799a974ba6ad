"""Yield-curve fitting and one-day-ahead rate forecasting.

Rates are in percent and maturities in years. Forecasts are strictly
walk-forward: the prediction for day ``s + 1`` is built from rows ``0..s``
of the panel only.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, InvalidArgument, NumericalFailure, WindowError
from .gp import fit, posterior_mean_var
from .kernels import Exponential, Kernel, Linear, RationalQuadratic, SquaredExponential
from .selection import HyperVector, maximize_likelihood
from .student_t import MatrixT

logger = logging.getLogger(__name__)

MODELS = ("persistence", "arx", "gp-arx", "tp-arx")
NU_GRID = (2.5, 3.0, 4.0, 6.0, 10.0, 20.0, 50.0)


def default_curve_kernel() -> Kernel:
    """``SE * EXP + RQ`` with length-scales in years."""
    return SquaredExponential(1.0, (10.0,)) * Exponential(1.0, 5.0) + RationalQuadratic(0.5, 1.0, 2.0)


def default_arx_kernel() -> Kernel:
    return Exponential(1.0, 1.0) + Linear(1.0)


def parse_maturity(label) -> float:
    """``"3M"`` -> 0.25, ``"2Y"`` -> 2.0; bare numbers are years."""
    text = str(label).strip().upper()
    try:
        if text.endswith("M"):
            value = float(text[:-1]) / 12.0
        elif text.endswith("Y"):
            value = float(text[:-1])
        else:
            value = float(text)
    except ValueError:
        raise DataError(f"cannot read maturity {label!r}") from None
    if not value > 0:
        raise DataError(f"maturity {label!r} must be positive")
    return value


@dataclass(frozen=True, eq=False)
class CurveSnapshot:
    date: object
    maturities: np.ndarray
    rates: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.maturities, dtype=float).ravel()
        r = np.asarray(self.rates, dtype=float).ravel()
        if m.size != r.size:
            raise InvalidArgument("maturities and rates differ in length")
        if np.any(m <= 0) or np.any(np.diff(m) <= 0):
            raise InvalidArgument("maturities must be positive and strictly increasing")
        if not np.all(np.isfinite(r)):
            raise InvalidArgument("rates must be finite")
        object.__setattr__(self, "maturities", m)
        object.__setattr__(self, "rates", r)


@dataclass(frozen=True, eq=False)
class FittedCurve:
    """A GP fit to one snapshot; call ``predict`` on any maturity grid."""

    model: object
    level: float
    theta: HyperVector

    def predict(self, maturities):
        """``(mean, lower, upper)`` with a band of two posterior standard deviations."""
        grid = np.asarray(maturities, dtype=float).reshape(-1, 1)
        mean, var = posterior_mean_var(self.model, grid)
        mean = mean + self.level
        half = 2.0 * np.sqrt(var)
        return mean, mean - half, mean + half


def fit_curve(snapshot: CurveSnapshot, kernel: Kernel | None = None, noise: float = 1e-2,
              restarts: int = 3, seed=None) -> FittedCurve:
    """De-mean the rates and fit the kernel hyperparameters with the noise held fixed."""
    if snapshot.maturities.size < 2:
        raise InvalidArgument("need at least two tenors")
    if not noise > 0:
        raise InvalidArgument("noise must be > 0")
    kernel = kernel or default_curve_kernel()
    X = snapshot.maturities.reshape(-1, 1)
    level = float(snapshot.rates.mean())
    y = snapshot.rates - level
    theta = maximize_likelihood(
        X, y, kernel, HyperVector.from_model(kernel, noise), restarts=restarts, seed=seed,
        fixed=("noise",),
    )
    k, s = theta.to_model(kernel)
    return FittedCurve(fit(X, y, k, s), level, theta)


@dataclass(frozen=True, eq=False)
class RatePanel:
    """Daily rates, one column per series (maturity label or other exogenous name)."""

    dates: np.ndarray
    columns: tuple
    values: np.ndarray

    def __post_init__(self):
        values = np.atleast_2d(np.asarray(self.values, dtype=float))
        dates = np.asarray(self.dates)
        columns = tuple(str(c) for c in self.columns)
        if values.shape != (dates.size, len(columns)):
            raise DataError("rate matrix does not match dates x columns")
        if not np.all(np.isfinite(values)):
            raise DataError("rate panel contains missing values")
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "columns", columns)
        object.__setattr__(self, "values", values)

    def column(self, name) -> np.ndarray:
        try:
            return self.values[:, self.columns.index(str(name))]
        except ValueError:
            raise DataError(f"no column named {name!r}", column=name) from None


@dataclass(frozen=True)
class ArxSpec:
    """Feature layout for the autoregressive models.

    The feature row at origin ``s`` holds ``Y_{s+1-k}`` for each
    autoregressive lag ``k`` and ``X_{s-j}`` for each exogenous lag ``j``,
    followed by a constant 1. The target is ``Y_{s+1}``.
    """

    target: str
    ar_lags: tuple = (1,)
    exog: tuple = (("3M", (0, 1)),)
    kernel: Kernel | None = None
    noise: float = 0.05
    fit_noise: bool = True
    window: int = 500
    refit_every: int = 21
    restarts: int = 1

    def __post_init__(self):
        if not self.ar_lags and not any(lags for _, lags in self.exog):
            raise InvalidArgument("need at least one feature")
        if any(k < 1 for k in self.ar_lags):
            raise InvalidArgument("autoregressive lags must be >= 1")
        if any(j < 0 for _, lags in self.exog for j in lags):
            raise InvalidArgument("exogenous lags must be >= 0")
        if self.window < 2 or self.refit_every < 1:
            raise InvalidArgument("window must be >= 2 and refit_every >= 1")
        if not self.noise > 0:
            raise InvalidArgument("noise must be > 0")

    @property
    def max_lag(self) -> int:
        lags = [k - 1 for k in self.ar_lags] + [j for _, lags in self.exog for j in lags]
        return max(lags) if lags else 0


def design(panel: RatePanel, spec: ArxSpec):
    """Feature rows ``F[s]`` and targets ``Y[s + 1]`` for every usable origin ``s``.

    Returns ``(origins, F, targets)``; the last origin has no target and its
    target entry is NaN.
    """
    y = panel.column(spec.target)
    T = y.size
    origins = np.arange(spec.max_lag, T)
    cols = [y[origins + 1 - k] for k in spec.ar_lags]
    for name, lags in spec.exog:
        x = panel.column(name)
        cols += [x[origins - j] for j in lags]
    cols.append(np.ones(origins.size))
    F = np.column_stack(cols)
    targets = np.full(origins.size, np.nan)
    targets[:-1] = y[origins[:-1] + 1]
    return origins, F, targets


@dataclass
class ForecastResult:
    model: str
    dates: np.ndarray
    prediction: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    realized: np.ndarray

    @property
    def rmse(self) -> float:
        return rmse(self.prediction, self.realized)


def rmse(predictions, realized) -> float:
    p = np.asarray(predictions, dtype=float).ravel()
    r = np.asarray(realized, dtype=float).ravel()
    if p.size != r.size or p.size < 1:
        raise InvalidArgument(f"rmse needs equal non-empty lengths, got {p.size} and {r.size}")
    return float(np.sqrt(np.mean((p - r) ** 2)))


class _GpArx:
    def __init__(self, spec: ArxSpec, seed):
        self.spec = spec
        self.kernel = spec.kernel or default_arx_kernel()
        self.theta = HyperVector.from_model(self.kernel, spec.noise)
        self.seed = seed

    def refit(self, F, y):
        fixed = () if self.spec.fit_noise else ("noise",)
        self.theta = maximize_likelihood(
            F, y, self.kernel, self.theta, restarts=self.spec.restarts, seed=self.seed, fixed=fixed,
        )

    def predict(self, F, y, f_new):
        k, s = self.theta.to_model(self.kernel)
        model = fit(F, y, k, s)
        mean, var = posterior_mean_var(model, f_new[None, :])
        return float(mean[0]), math.sqrt(float(var[0]) + s**2)


class _TpArx:
    """Rows ``[features, target]`` as draws of a matrix-t with identity row scale.

    Column scale is ``(nu - 2)`` times the sample covariance so the implied
    covariance matches it; ``nu`` comes from a likelihood grid.
    """

    def __init__(self):
        self.nu = NU_GRID[-1]

    @staticmethod
    def _params(Z):
        M = Z.mean(axis=0)
        S = np.cov(Z, rowvar=False, ddof=1)
        S = 0.5 * (S + S.T) + 1e-10 * np.trace(S) / S.shape[0] * np.eye(S.shape[0])
        return M, S

    def refit(self, F, y):
        Z = np.column_stack([F[:, :-1], y])
        M, S = self._params(Z)
        n = Z.shape[0]
        scores = []
        for nu in NU_GRID:
            d = MatrixT(np.tile(M, (n, 1)), np.eye(n), (nu - 2) * S, nu)
            scores.append(d.log_density(Z))
        self.nu = NU_GRID[int(np.argmax(scores))]

    def predict(self, F, y, f_new):
        Z = np.column_stack([F[:, :-1], y])
        M, S = self._params(Z)
        n, q = Z.shape
        joint = MatrixT(np.tile(M, (n + 1, 1)), np.eye(n + 1), (self.nu - 2) * S, self.nu)
        row = joint.condition_rows(np.arange(n), Z)
        feats = np.arange(q - 1)
        target = row.condition_cols(feats, f_new[:-1][None, :])
        _, cov = target.moments()
        return float(target.M[0, 0]), math.sqrt(float(cov[0, 0]))


def _ols(F, y, f_new):
    coef, *_ = np.linalg.lstsq(F, y, rcond=None)
    resid = y - F @ coef
    dof = max(F.shape[0] - F.shape[1], 1)
    return float(f_new @ coef), math.sqrt(float(resid @ resid) / dof)


def forecast_rate(panel: RatePanel, spec: ArxSpec, model: str = "gp-arx", start: int | None = None,
                  end: int | None = None, seed=None) -> ForecastResult:
    """Walk-forward one-day-ahead forecasts of ``spec.target`` for days ``start..end``.

    ``start`` and ``end`` are row indices of the predicted days (``end``
    inclusive, default the last row). Each model trains on the latest
    ``spec.window`` (feature, next-day target) pairs available at the
    origin; GP-ARX and TP-ARX re-estimate their hyperparameters every
    ``spec.refit_every`` forecasts.
    """
    if model not in MODELS:
        raise InvalidArgument(f"model must be one of {MODELS}")
    origins, F, targets = design(panel, spec)
    y = panel.column(spec.target)
    first = spec.max_lag + spec.window + 1  # earliest predicted day with a full window
    start = first if start is None else int(start)
    end = y.size - 1 if end is None else int(end)
    if start < first:
        raise WindowError(f"forecasts can start at row {first} at the earliest, got {start}")
    if end < start or end >= y.size:
        raise WindowError(f"empty or out-of-range forecast range {start}..{end}")

    learner = {"gp-arx": lambda: _GpArx(spec, seed), "tp-arx": _TpArx}.get(model, lambda: None)()
    preds, sds = [], []
    for step, day in enumerate(range(start, end + 1)):
        s = day - 1  # origin
        i = s - spec.max_lag  # row of the origin in the design
        train = slice(i - spec.window, i)  # pairs whose target is known at s
        if model == "persistence":
            changes = np.diff(y[s - spec.window : s + 1])
            preds.append(y[s])
            sds.append(float(np.sqrt(np.mean(changes**2))))
            continue
        Ft, yt = F[train], targets[train]
        if model == "arx":
            m, sd = _ols(Ft, yt, F[i])
        else:
            if step % spec.refit_every == 0:
                learner.refit(Ft, yt)
            m, sd = learner.predict(Ft, yt, F[i])
        preds.append(m)
        sds.append(sd)
    preds = np.array(preds)
    sds = np.array(sds)
    days = np.arange(start, end + 1)
    return ForecastResult(model, panel.dates[days], preds, preds - 2 * sds, preds + 2 * sds, y[days])

"""Command-line entry point: ``gpq <command> ...``.

Exit codes: 0 success, 1 usage or invalid setting, 2 data error,
3 numerical failure. All randomness derives from ``--seed`` (falling back
to the ``GPQ_SEED`` environment variable).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import io
from .admm import AdmmSettings, AllocationProblem, solve_allocation
from .bayesopt import BoAborted, BoSettings, forrester, run_bo
from .curves import MODELS, ArxSpec, fit_curve, forecast_rate
from .errors import DataError, GpqError, InvalidArgument, NumericalFailure
from .gp import fit, posterior
from .kernels import parse_kernel
from .selection import HyperVector, maximize_likelihood
from .strategy import StrategyConfig, hurst_exponent, run_backtest

logger = logging.getLogger("gpq")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(GpqError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

CONFIG_KEYS = {
    "backtest": {
        "frequency": str, "sigma_bar": float, "mode": str, "lam": float, "ell_mu": int,
        "ell_sigma": int, "bo_budget": int, "lam_bounds": list, "ell_mu_bounds": list,
        "ell_sigma_bounds": list, "lookback_years": int, "top_k": int, "start": int,
        "phi": float, "abs_tol": float, "rel_tol": float, "max_iter": int,
    },
    "bo": {"budget": int, "n_init": int, "acquisition": str, "xi": float, "restarts": int,
           "kg_samples": int},
    "curve": {"kernel": str, "noise": float, "restarts": int, "target": str, "model": str,
              "exog": str, "exog_lags": list, "ar_lags": list, "window": int,
              "refit_every": int},
    "gp": {"kernel": str, "noise": float, "restarts": int},
    "global": {"seed": int},
}


def load_config(path) -> dict:
    """Read a TOML file with one table per command; reject unknown tables and keys."""
    raw = io.read_config(path)
    out = {}
    for section, body in raw.items():
        if section not in CONFIG_KEYS or not isinstance(body, dict):
            raise UsageError(f"{path}: unknown config section [{section}]")
        allowed = CONFIG_KEYS[section]
        for key, value in body.items():
            if key not in allowed:
                raise UsageError(f"{path}: unknown key {key!r} in [{section}]")
            typ = allowed[key]
            ok = isinstance(value, typ) or (typ is float and isinstance(value, int))
            if not ok or isinstance(value, bool):
                raise UsageError(f"{path}: [{section}] {key} must be of type {typ.__name__}")
        out[section] = dict(body)
    return out


def _setting(args, cfg, section, key, default=None):
    """Flag value if given, else config value, else ``default``."""
    value = getattr(args, key, None)
    if value is not None:
        return value
    return cfg.get(section, {}).get(key, default)


def resolve_seed(args, cfg):
    if args.seed is not None:
        return args.seed
    if "seed" in cfg.get("global", {}):
        return cfg["global"]["seed"]
    env = os.environ.get("GPQ_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"GPQ_SEED must be an integer, got {env!r}") from None
    return 0


def _out_dir(path):
    if path is None:
        return None
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_table(out_path, header, rows, stdout):
    if out_path is None:
        io.write_csv(stdout, header, rows)
    else:
        io.write_csv(out_path, header, rows)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_bo_demo(args, cfg, seed, stdout):
    settings = BoSettings(
        budget=_setting(args, cfg, "bo", "budget", 15),
        n_init=_setting(args, cfg, "bo", "n_init", 3),
        acquisition=_setting(args, cfg, "bo", "acquisition", "ei"),
        direction="minimize",
        xi=_setting(args, cfg, "bo", "xi", 0.0),
        restarts=_setting(args, cfg, "bo", "restarts", 5),
        kg_samples=_setting(args, cfg, "bo", "kg_samples", 16),
        seed=seed,
    )
    if settings.acquisition not in ("ei", "pi", "kg"):
        raise UsageError(f"--acquisition must be ei, pi or kg, got {settings.acquisition!r}")
    result = run_bo(lambda x: float(forrester(x[0])), [[0.0, 1.0]], settings)
    rows = [
        (h.iteration, float(h.x[0]), h.y, float(h.incumbent_x[0]), h.incumbent_y, h.acquisition_max)
        for h in result.history
    ]
    header = ["iteration", "x", "y", "incumbent_x", "incumbent_y", "acquisition_max"]
    summary = {"best_x": float(result.best_x[0]), "best_y": result.best_y,
               "evaluations": len(result.history), "seed": seed,
               "acquisition": settings.acquisition}
    out = _out_dir(args.out)
    if out is None:
        io.write_csv(stdout, header, rows)
        stdout.write(io.dump_json(summary))
    else:
        io.write_csv(out / "history.csv", header, rows)
        io.write_json(out / "summary.json", summary)
    return EXIT_OK


def cmd_allocate(args, cfg, seed, stdout):
    doc = io.read_json(args.input)
    required = ("mu", "Sigma", "lambda", "sigma_bar")
    missing = [k for k in required if k not in doc]
    if missing:
        raise DataError(f"missing keys {missing}", path=args.input)
    unknown = set(doc) - set(required) - {"x_prev", "phi", "abs_tol", "rel_tol", "max_iter"}
    if unknown:
        raise DataError(f"unknown keys {sorted(unknown)}", path=args.input)
    mu = np.asarray(doc["mu"], dtype=float)
    try:
        problem = AllocationProblem(
            mu, np.asarray(doc["Sigma"], dtype=float), doc["lambda"],
            np.asarray(doc.get("x_prev", np.zeros(mu.size)), dtype=float), doc["sigma_bar"],
        )
        settings = AdmmSettings(
            phi=doc.get("phi", 1.0), abs_tol=doc.get("abs_tol", 1e-8),
            rel_tol=doc.get("rel_tol", 1e-6), max_iter=doc.get("max_iter", 10_000),
        )
    except (InvalidArgument, TypeError, ValueError) as exc:
        raise DataError(str(exc), path=args.input) from None
    x, diag = solve_allocation(problem, settings)
    result = {
        "weights": x, "iterations": diag.iterations, "primal_residual": diag.primal_residual,
        "dual_residual": diag.dual_residual, "volatility": diag.volatility,
        "objective": problem.objective(x), "jitter": diag.jitter, "rescaled": diag.rescaled,
        "phi": diag.phi,
    }
    text = io.dump_json(result)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        stdout.write(text)
    return EXIT_OK


def _strategy_config(args, cfg):
    section = dict(cfg.get("backtest", {}))
    for key in ("mode", "sigma_bar", "lam", "ell_mu", "ell_sigma", "bo_budget", "frequency", "start"):
        value = getattr(args, key, None)
        if value is not None:
            section[key] = value
    admm = {k: section.pop(k) for k in ("phi", "abs_tol", "rel_tol", "max_iter") if k in section}
    for key in ("lam_bounds", "ell_mu_bounds", "ell_sigma_bounds"):
        if key in section:
            if len(section[key]) != 2:
                raise UsageError(f"[backtest] {key} must have two entries")
            section[key] = tuple(float(v) for v in section[key])
    admm.setdefault("phi", None)
    return StrategyConfig(**section, admm=AdmmSettings(**admm))


def cmd_backtest(args, cfg, seed, stdout):
    config = _strategy_config(args, cfg)
    panel, fills = io.load_panel(args.prices, "prices")
    logger.info("loaded %d days x %d assets (forward-filled %s)", panel.n_days, panel.n_assets, fills)
    result = run_backtest(panel, config, seed=seed)
    out = _out_dir(args.out)
    dates = result.dates
    io.write_csv(out / "nav.csv", ["date", "return", "nav"],
                 zip((io.fmt(d) for d in dates), result.returns, result.nav))
    io.write_csv(out / "weights.csv", ["date", *panel.assets],
                 ([io.fmt(panel.dates[t]), *w] for t, w in zip(result.rebalance_days, result.weights)))
    rows = []
    for rec in result.hyper_trace:
        scores = rec.scores or (float("nan"),) * len(rec.chosen)
        for rank, (h, sc) in enumerate(zip(rec.chosen, scores), start=1):
            rows.append((io.fmt(rec.date), rank, h.lam, h.ell_mu, h.ell_sigma, sc))
    io.write_csv(out / "hyperparams.csv", ["date", "rank", "lam", "ell_mu", "ell_sigma", "score"], rows)
    io.write_json(out / "summary.json", {k: result.summary.get(k) for k in ("sharpe", "ann_return", "ann_vol", "mdd")})
    return EXIT_OK


def cmd_hurst(args, cfg, seed, stdout):
    table = io.read_panel(args.input)
    columns = [args.column] if args.column else table.columns
    out = {}
    for col in columns:
        if col not in table.columns:
            raise DataError(f"no column named {col!r}", path=args.input, column=col)
        values = table.values[:, table.columns.index(col)]
        values = values[np.isfinite(values)]
        try:
            out[col] = hurst_exponent(values, args.min_block)
        except GpqError as exc:
            raise type(exc)(f"{args.input}: column {col!r}: {exc}") from None
    stdout.write(io.dump_json(out))
    return EXIT_OK


def cmd_curve_fit(args, cfg, seed, stdout):
    snap = io.load_snapshot(args.snapshot)
    text = _setting(args, cfg, "curve", "kernel")
    kernel = parse_kernel(text) if text else None
    fitted = fit_curve(snap, kernel, noise=_setting(args, cfg, "curve", "noise", 1e-2),
                       restarts=_setting(args, cfg, "curve", "restarts", 3), seed=seed)
    grid = np.linspace(args.grid_min, args.grid_max, args.grid_n)
    mean, lo, hi = fitted.predict(grid)
    _write_table(args.out, ["maturity", "mean", "lo", "hi"], zip(grid, mean, lo, hi), stdout)
    return EXIT_OK


def cmd_curve_forecast(args, cfg, seed, stdout):
    panel, _ = io.load_panel(args.panel, "rates")
    target = _setting(args, cfg, "curve", "target")
    if target is None:
        raise UsageError("--target is required")
    model = _setting(args, cfg, "curve", "model", "gp-arx")
    if model not in MODELS:
        raise UsageError(f"--model must be one of {MODELS}")
    exog = _setting(args, cfg, "curve", "exog", "3M")
    exog_lags = tuple(cfg.get("curve", {}).get("exog_lags", (0, 1)))
    ar_lags = tuple(cfg.get("curve", {}).get("ar_lags", (1,)))
    kernel_text = _setting(args, cfg, "curve", "kernel")
    spec = ArxSpec(
        target, ar_lags=ar_lags, exog=((exog, exog_lags),) if exog else (),
        kernel=parse_kernel(kernel_text) if kernel_text else None,
        window=_setting(args, cfg, "curve", "window", 500),
        refit_every=_setting(args, cfg, "curve", "refit_every", 21),
    )
    for name in [target] + ([exog] if exog else []):
        if name not in panel.columns:
            raise DataError(f"no column named {name!r}", path=args.panel, column=name)
    result = forecast_rate(panel, spec, model, seed=seed)
    rmses = {model: result.rmse}
    for base in ("persistence", "arx"):
        if base != model:
            rmses[base] = forecast_rate(panel, spec, base, seed=seed).rmse
    header = ["date", "prediction", "lo", "hi", "realized"]
    rows = list(zip((io.fmt(d) for d in result.dates), result.prediction, result.lower,
                    result.upper, result.realized))
    summary = {"target": target, "model": model, "rmse": rmses, "n_forecasts": len(rows)}
    out = _out_dir(args.out)
    if out is None:
        io.write_csv(stdout, header, rows)
        stdout.write(io.dump_json(summary))
    else:
        io.write_csv(out / "forecast.csv", header, rows)
        io.write_json(out / "summary.json", summary)
    return EXIT_OK


def cmd_gp_fit(args, cfg, seed, stdout):
    header, data = io.read_table(args.data, min_columns=2)
    X, y = data[:, :-1], data[:, -1]
    text = _setting(args, cfg, "gp", "kernel", "SE(sigma=1,l=1)")
    kernel = parse_kernel(text)
    noise = _setting(args, cfg, "gp", "noise", 0.1)
    theta = maximize_likelihood(X, y, kernel, HyperVector.from_model(kernel, noise),
                                restarts=_setting(args, cfg, "gp", "restarts", 5), seed=seed)
    k, s = theta.to_model(kernel)
    doc = {"kernel": k.to_string(), "noise": s, "inputs": header[:-1], "target": header[-1],
           "X": X, "y": y, "hyperparameters": theta.as_dict()}
    text = io.dump_json(doc)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        stdout.write(text)
    return EXIT_OK


def cmd_gp_predict(args, cfg, seed, stdout):
    doc = io.read_json(args.model)
    try:
        kernel = parse_kernel(doc["kernel"])
        X = np.asarray(doc["X"], dtype=float)
        y = np.asarray(doc["y"], dtype=float)
        model = fit(X, y, kernel, float(doc["noise"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed model file: {exc}", path=args.model) from None
    header, pts = io.read_table(args.points)
    if pts.shape[1] != X.shape[1]:
        raise DataError(f"expected {X.shape[1]} input columns", path=args.points, row=1)
    post = posterior(model, pts, full_cov=False)
    std = post.std
    rows = [(*p, m, s, m - 2 * s, m + 2 * s) for p, m, s in zip(pts, post.mean, std)]
    _write_table(args.out, [*header, "mean", "std", "lo", "hi"], rows, stdout)
    return EXIT_OK


def cmd_correlate(args, cfg, seed, stdout):
    """Pearson correlation of each per-date averaged hyperparameter with an index series."""
    header, rows = io.read_records(args.trace)
    needed = ["date", "lam", "ell_mu", "ell_sigma"]
    if any(c not in header for c in needed):
        raise DataError(f"trace needs columns {needed}", path=args.trace, row=1)
    by_date = {}
    for line, rec in rows:
        try:
            vals = [float(rec[c]) for c in needed[1:]]
        except ValueError:
            raise DataError("non-numeric hyperparameter", path=args.trace, row=line) from None
        by_date.setdefault(rec["date"].strip(), []).append(vals)
    index = io.read_panel(args.index)
    if len(index.columns) != 1:
        raise DataError("index file must have exactly one value column", path=args.index, row=1)
    lookup = {io.fmt(d): v for d, v in zip(index.dates, index.values[:, 0]) if np.isfinite(v)}
    common = sorted(d for d in by_date if d in lookup)
    if len(common) < 3:
        raise DataError("fewer than three dates shared by trace and index", path=args.index)
    H = np.array([np.mean(by_date[d], axis=0) for d in common])
    v = np.array([lookup[d] for d in common])
    out = {"n": len(common)}
    for j, name in enumerate(needed[1:]):
        col = H[:, j]
        out[name] = float(np.corrcoef(col, v)[0, 1]) if np.std(col) > 0 and np.std(v) > 0 else None
    stdout.write(io.dump_json(out))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _global_options(suppress: bool) -> argparse.ArgumentParser:
    # Subcommands repeat the global options with suppressed defaults so a
    # value given before the command name is not overwritten by None.
    kw = {"default": argparse.SUPPRESS} if suppress else {}
    g = argparse.ArgumentParser(add_help=False)
    g.add_argument("--seed", type=int, help="global seed (default: $GPQ_SEED, else 0)", **kw)
    g.add_argument("--config", help="TOML file with one table per command", **kw)
    g.add_argument("--threads", type=int, help="cap on BLAS threads", **kw)
    g.add_argument("-v", "--verbose", action="count", **({"default": 0} if not suppress else kw))
    return g


def build_parser() -> argparse.ArgumentParser:
    common = _global_options(True)
    p = _Parser(prog="gpq", description="Gaussian-process regression, Bayesian optimization and "
                "trend-following tools.", parents=[_global_options(False)])
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("bo-demo", parents=[common], help="minimize the Forrester function")
    s.add_argument("--budget", type=int)
    s.add_argument("--n-init", dest="n_init", type=int)
    s.add_argument("--acquisition", choices=["ei", "pi", "kg"])
    s.add_argument("--xi", type=float)
    s.add_argument("--out", help="directory for history.csv and summary.json")
    s.set_defaults(func=cmd_bo_demo)

    s = sub.add_parser("allocate", parents=[common], help="solve one allocation problem")
    s.add_argument("--input", required=True, help="JSON with mu, Sigma, lambda, sigma_bar[, x_prev]")
    s.add_argument("--out")
    s.set_defaults(func=cmd_allocate)

    s = sub.add_parser("backtest", parents=[common], help="run the trend-following backtest")
    s.add_argument("--prices", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--mode", choices=["fixed", "online"])
    s.add_argument("--frequency", choices=["monthly", "weekly"])
    s.add_argument("--sigma-bar", dest="sigma_bar", type=float)
    s.add_argument("--lam", type=float)
    s.add_argument("--ell-mu", dest="ell_mu", type=int)
    s.add_argument("--ell-sigma", dest="ell_sigma", type=int)
    s.add_argument("--bo-budget", dest="bo_budget", type=int)
    s.add_argument("--start", type=int, help="row index of the first rebalance")
    s.set_defaults(func=cmd_backtest)

    s = sub.add_parser("hurst", parents=[common], help="R/S Hurst exponent per column")
    s.add_argument("--input", required=True, help="CSV with a date column")
    s.add_argument("--column")
    s.add_argument("--min-block", dest="min_block", type=int, default=8)
    s.set_defaults(func=cmd_hurst)

    curve = sub.add_parser("curve", parents=[common], help="yield-curve fitting and forecasting")
    csub = curve.add_subparsers(dest="curve_command", parser_class=_Parser)
    s = csub.add_parser("fit", parents=[common])
    s.add_argument("--snapshot", required=True, help="CSV maturity,rate")
    s.add_argument("--kernel")
    s.add_argument("--noise", type=float)
    s.add_argument("--grid-min", dest="grid_min", type=float, default=0.1)
    s.add_argument("--grid-max", dest="grid_max", type=float, default=30.0)
    s.add_argument("--grid-n", dest="grid_n", type=int, default=300)
    s.add_argument("--out")
    s.set_defaults(func=cmd_curve_fit)
    s = csub.add_parser("forecast", parents=[common])
    s.add_argument("--panel", required=True)
    s.add_argument("--target")
    s.add_argument("--model", choices=list(MODELS))
    s.add_argument("--exog")
    s.add_argument("--kernel")
    s.add_argument("--window", type=int)
    s.add_argument("--out", help="directory for forecast.csv and summary.json")
    s.set_defaults(func=cmd_curve_forecast)

    gp = sub.add_parser("gp", parents=[common], help="fit a GP or predict with a fitted one")
    gsub = gp.add_subparsers(dest="gp_command", parser_class=_Parser)
    s = gsub.add_parser("fit", parents=[common])
    s.add_argument("--data", required=True, help="CSV; last column is the target")
    s.add_argument("--kernel")
    s.add_argument("--noise", type=float)
    s.add_argument("--out")
    s.set_defaults(func=cmd_gp_fit)
    s = gsub.add_parser("predict", parents=[common])
    s.add_argument("--model", required=True)
    s.add_argument("--points", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_gp_predict)

    s = sub.add_parser("correlate", parents=[common],
                       help="correlate a hyperparameter trace with an index series")
    s.add_argument("--trace", required=True, help="hyperparams.csv from backtest")
    s.add_argument("--index", required=True, help="CSV date,value")
    s.set_defaults(func=cmd_correlate)
    return p


def main(argv=None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    if not argv:
        parser.print_help(stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
        if getattr(args, "func", None) is None:
            parser.print_help(stderr)
            return EXIT_USAGE
        logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=stderr,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.threads is not None and args.threads < 1:
            raise UsageError("--threads must be >= 1")
        cfg = load_config(args.config) if args.config else {}
        seed = resolve_seed(args, cfg)
        with threadpool_limits(limits=args.threads):
            return args.func(args, cfg, seed, stdout)
    except UsageError as exc:
        print(f"error: {exc}", file=stderr)
        return EXIT_USAGE
    except BoAborted as exc:
        print(f"error: {exc}", file=stderr)
        return _code(exc.__cause__)
    except GpqError as exc:
        print(f"error: {exc}", file=stderr)
        return _code(exc)
    except OSError as exc:
        print(f"error: {exc.filename or ''}: {exc.strerror}", file=stderr)
        return EXIT_DATA


def _code(exc) -> int:
    if isinstance(exc, (UsageError, InvalidArgument)):
        return EXIT_USAGE
    if isinstance(exc, DataError):
        return EXIT_DATA
    if isinstance(exc, NumericalFailure):
        return EXIT_NUMERICAL
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

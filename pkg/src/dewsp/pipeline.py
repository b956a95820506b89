"""End-to-end run: data -> features -> tuned network -> backtests -> metrics and plot."""

from __future__ import annotations

import hashlib
import json
import logging
import platform
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import __version__
from .backtest import (
    BacktestContext,
    BacktestResult,
    ForecastBook,
    PerformanceCurve,
    Strategy,
    run_backtest,
    write_returns,
    write_summary,
)
from .config import RunConfig
from .errors import DataError, InsufficientWarmup, ValidationError
from .hpo import run_search, trial_seed
from .indicators import FeatureMatrix, build_features, warmup
from .market_data import SplitBoundaries, SplitPlan, Universe, build_universe, load_directory, split
from .metrics import build_report, write_report
from .neural import Model, predict, save_model
from .portfolio import (
    HIST_SCOPES,
    SUBSET_FAMILIES,
    ReturnForecast,
    historical_mean_forecast,
    sample_covariance,
    scope_returns,
    write_weights,
)
from .synth import synth_market

log = logging.getLogger(__name__)

POOLED = "*"


def load_universe(cfg: RunConfig) -> Universe:
    if cfg.source == "synthetic":
        uni = synth_market(cfg.synth, cfg.synth_seed)
        if cfg.start or cfg.end:
            uni = build_universe(uni.assets, cfg.start or None, cfg.end or None)
    else:
        series = load_directory(cfg.data_path(), cfg.tickers or None)
        uni = build_universe(series, cfg.start or None, cfg.end or None)
    if cfg.tickers:
        uni = uni.select(cfg.tickers)
    return uni


def split_plan(cfg: RunConfig) -> SplitPlan:
    return SplitPlan(cfg.is_fraction, cfg.train_fraction_of_is, cfg.min_months)


def training_sets(fm: FeatureMatrix, bounds: SplitBoundaries, lead: int):
    """Train and validation rows whose targets stay inside their own window."""
    train_rows = fm.months_in(range(lead, bounds.train.stop - 1)).labelled()
    val_rows = fm.months_in(range(bounds.validation.start, bounds.validation.stop - 1)).labelled()
    if len(train_rows) == 0 or len(val_rows) == 0:
        raise InsufficientWarmup(
            f"no training rows after the {lead}-month warm-up (train ends at month "
            f"{bounds.train.stop})"
        )
    return train_rows, val_rows


def fit_models(fm: FeatureMatrix, bounds: SplitBoundaries, lead: int, cfg: RunConfig,
               out_dir: Path | None = None) -> tuple[dict[str, Model], dict]:
    """Tune and train; one pooled model, or one model per ticker."""
    fixed = {"max_epochs": cfg.max_epochs, "patience": cfg.patience}
    train_rows, val_rows = training_sets(fm, bounds, lead)
    if cfg.training_mode == "pooled":
        groups = [(POOLED, train_rows, val_rows, cfg.seed)]
    else:
        groups = [
            (tk, train_rows.for_ticker(tk), val_rows.for_ticker(tk), trial_seed(cfg.seed, 10_000 + j))
            for j, tk in enumerate(sorted(set(fm.tickers)))
        ]
    models, searches = {}, {}
    for key, tr, va, seed in groups:
        suffix = "" if key == POOLED else f"_{key}"
        log_path = out_dir / f"trials{suffix}.csv" if out_dir else None
        res = run_search(tr, va, cfg.hpo_evals, seed, cfg.hpo_startup, cfg.hpo_gamma,
                         cfg.hpo_candidates, fixed, log_path)
        if res.model is None:
            raise DataError(f"every trial diverged for {key}")
        models[key] = res.model
        best = res.best_trial
        searches[key] = {
            "seed": seed,
            "n_trials": len(res.trials),
            "best_trial": res.state.best,
            "best_loss": best.loss,
            "best_params": dict(best.params),
            "trial_seeds": [t.seed for t in res.trials],
        }
        if out_dir:
            save_model(res.model, out_dir / f"model{suffix}.npz")
    return models, searches


def deep_forecast(models: Mapping[str, Model], fm: FeatureMatrix, universe: Universe,
                  t: int) -> ReturnForecast:
    X = fm.at_month(t, universe.tickers)
    if POOLED in models:
        mu = predict(models[POOLED], X)
    else:
        mu = np.array([predict(models[tk], X[j : j + 1])[0]
                       for j, tk in enumerate(universe.tickers)])
    return ReturnForecast(universe.months[t], mu, "deep", universe.tickers)


def build_context(universe: Universe, bounds: SplitBoundaries, models: Mapping[str, Model],
                  cfg: RunConfig, months: Sequence[int],
                  fm: FeatureMatrix | None = None) -> BacktestContext:
    """Forecast books and risk model for the given decision months.

    Historical means and the static covariance use in-sample months only.
    """
    specs = cfg.signal_specs
    lead = warmup(specs)
    if fm is None:
        fm = build_features(universe, specs, range(lead, universe.n_months))
    deep = ForecastBook({t: deep_forecast(models, fm, universe, t) for t in months}) \
        if models else None
    R = universe.returns
    hist = {}
    for fam, scope in HIST_SCOPES.items():
        if fam not in cfg.families:
            continue
        fc = historical_mean_forecast(scope_returns(R, bounds, scope), scope,
                                      tickers=universe.tickers)
        hist[fam] = ForecastBook(static=fc)
    covariance = None
    needs_cov = bool({"MSRP", "MVP"} & set(cfg.families))
    if needs_cov and cfg.covariance == "static":
        window = range(max(bounds.in_sample.start, 1) - 1, bounds.in_sample.stop - 1)
        cov = sample_covariance(scope_returns(R, bounds, "train+validation"), window)

        def covariance(t, cov=cov):
            return cov
    elif needs_cov:
        cache: dict[int, object] = {}

        def covariance(t):
            # returns realized up to and including month t
            if t not in cache:
                cache[t] = sample_covariance(R[:t], range(0, t))
            return cache[t]

    return BacktestContext(universe.tickers, deep, hist, covariance,
                           seed=trial_seed(cfg.seed, 20_000), rewsp_redraw=cfg.rewsp_redraw)


def decision_windows(bounds: SplitBoundaries, lead: int, n_months: int) -> dict[str, range]:
    """Rebalance months per period; each decision earns the following month's return."""
    is_stop = bounds.in_sample.stop - 1
    if lead >= is_stop:
        raise InsufficientWarmup("in-sample period shorter than the indicator warm-up")
    return {"IS": range(lead, is_stop), "OOS": range(is_stop, n_months - 1)}


def subset_sizes(cfg: RunConfig, n0: int) -> list[int]:
    sizes = sorted(set(cfg.subset_sizes)) or list(range(1, n0 + 1))
    if sizes[-1] > n0:
        raise ValidationError(f"subset size {sizes[-1]} exceeds universe size {n0}")
    return sizes


def run_period(universe: Universe, window: range, ctx: BacktestContext, cfg: RunConfig,
               keep_weights: bool = False) -> tuple[list[BacktestResult], dict[str, PerformanceCurve]]:
    sizes = subset_sizes(cfg, universe.n_assets)
    results, curves = [], {}
    for fam in cfg.families:
        if fam in SUBSET_FAMILIES:
            fam_res = [run_backtest(universe, Strategy(fam, n, ctx), window, keep_weights)
                       for n in sizes]
            curves[fam] = PerformanceCurve.from_results(fam, fam_res)
        else:
            fam_res = [run_backtest(universe, Strategy(fam, None, ctx), window, keep_weights)]
        results.extend(fam_res)
    return results, curves


def sha256(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def input_hashes(cfg: RunConfig) -> dict[str, str]:
    if cfg.source != "csv":
        return {}
    d = cfg.data_path()
    paths = [d / f"{t}.csv" for t in cfg.tickers] if cfg.tickers else sorted(d.glob("*.csv"))
    return {p.name: sha256(p) for p in sorted(paths) if p.exists()}


@dataclass
class RunResult:
    manifest: dict
    universe: Universe
    bounds: SplitBoundaries
    models: dict[str, Model]
    context: BacktestContext
    windows: dict[str, range]
    results: dict[str, list[BacktestResult]] = field(default_factory=dict)
    curves: dict[str, dict[str, PerformanceCurve]] = field(default_factory=dict)
    reports: dict = field(default_factory=dict)


def run_pipeline(cfg: RunConfig, out_dir: str | Path | None = None, plot: bool = True) -> RunResult:
    """Full experiment; every file goes under ``out_dir``."""
    cfg.validate()
    out = Path(out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    stage = "ingest"
    try:
        universe = load_universe(cfg)
        stage = "split"
        bounds = split(universe, split_plan(cfg))
        stage = "features"
        specs = cfg.signal_specs
        lead = warmup(specs)
        windows = decision_windows(bounds, lead, universe.n_months)
        fm = build_features(universe, specs, range(lead, universe.n_months))
        fm.to_csv(out / "features.csv")
        stage = "tune"
        models, searches = fit_models(fm, bounds, lead, cfg, out)
        stage = "backtest"
        months = [t for w in windows.values() for t in w]
        ctx = build_context(universe, bounds, models, cfg, months, fm)
        res = RunResult({}, universe, bounds, models, ctx, windows)
        for period, window in windows.items():
            pdir = out / period.lower()
            pdir.mkdir(exist_ok=True)
            results, curves = run_period(universe, window, ctx, cfg, keep_weights=cfg.write_weights)
            write_returns(results, pdir / "returns.csv")
            write_summary(results, pdir / "summary.csv")
            if cfg.write_weights:
                write_weights([pw for r in results for pw in r.weights], universe.tickers,
                              pdir / "weights.csv")
            res.results[period], res.curves[period] = results, curves
        stage = "report"
        full = subset_sizes(cfg, universe.n_assets) == list(range(1, universe.n_assets + 1))
        if "DEWSP" in cfg.families and full:
            res.reports = {p: build_report(p, c) for p, c in res.curves.items()}
            write_report(res.reports.values(), out / "metrics.json")
        if plot:
            from .plotting import risk_return_plot

            risk_return_plot({p: r for p, r in res.results.items()}, out / "risk_return.svg")
    except Exception as exc:
        if hasattr(exc, "args") and exc.args and isinstance(exc.args[0], str):
            exc.args = (f"[{stage}] {exc.args[0]}", *exc.args[1:])
        raise

    manifest = {
        "dewsp_version": __version__,
        "numpy_version": np.__version__,
        "python_version": platform.python_version(),
        "config": {**cfg.to_dict(), "data_dir": str(cfg.data_path()) if cfg.data_dir else ""},
        "data": {
            "tickers": list(universe.tickers),
            "rejected": list(universe.rejected),
            "window": list(universe.common_window),
            "n_months": universe.n_months,
        },
        "split": {
            k: {"months": [r.start, r.stop],
                "dates": [str(universe.months[r.start]), str(universe.months[r.stop - 1])]}
            for k, r in (("train", bounds.train), ("validation", bounds.validation),
                         ("test", bounds.test))
        },
        "decision_windows": {k: [w.start, w.stop] for k, w in windows.items()},
        "seeds": {"seed": cfg.seed, "synth_seed": cfg.synth_seed,
                  "rewsp_seed": ctx.seed, "searches": searches},
        "inputs": input_hashes(cfg),
    }
    manifest["outputs"] = {
        str(p.relative_to(out)): sha256(p)
        for p in sorted(out.rglob("*")) if p.is_file() and p.suffix == ".csv"
        and not p.name.startswith("trials")
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    res.manifest = manifest
    return res


def config_from_manifest(path: str | Path, check_inputs: bool = True) -> RunConfig:
    manifest = json.loads(Path(path).read_text())
    cfg = RunConfig.from_dict(manifest["config"])
    if check_inputs:
        now = input_hashes(cfg)
        if now != manifest.get("inputs", {}):
            raise DataError("input files differ from those recorded in the manifest")
    return cfg

"""``dewsp`` command line.

Exit codes: 0 success, 1 validation failure, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import RunConfig
from .errors import DewspError

log = logging.getLogger("dewsp")


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def cmd_synth(args) -> None:
    from .market_data import write_ohlcv
    from .synth import synth_market

    cfg = _config(args)
    seed = cfg.synth_seed if args.seed is None else args.seed
    uni = synth_market(cfg.synth, seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for a in uni.assets:
        write_ohlcv(a, out / f"{a.ticker}.csv")
    print(f"wrote {uni.n_assets} assets x {uni.n_months} months to {out}")


def cmd_ingest(args) -> None:
    from .market_data import build_universe, load_directory

    series = load_directory(args.input, args.tickers.split(",") if args.tickers else None)
    uni = build_universe(series, args.start, args.end)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    uni.save(out)
    start, end = uni.common_window
    print(f"universe: {uni.n_assets} assets, {start}..{end} ({uni.n_months} months)"
          + (f"; rejected {', '.join(uni.rejected)}" if uni.rejected else ""))


def cmd_features(args) -> None:
    from .indicators import build_features
    from .market_data import Universe

    cfg = _config(args)
    fm = build_features(Universe.load(args.universe), cfg.signal_specs)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fm.to_csv(out)
    print(f"{len(fm)} rows x {fm.n_features} signals -> {out}")


def _prepared(args):
    from .indicators import build_features, warmup
    from .market_data import Universe, split
    from .pipeline import split_plan

    cfg = _config(args)
    uni = Universe.load(args.universe)
    bounds = split(uni, split_plan(cfg))
    lead = warmup(cfg.signal_specs)
    fm = build_features(uni, cfg.signal_specs, range(lead, uni.n_months))
    return cfg, uni, bounds, lead, fm


def cmd_tune(args) -> None:
    from .pipeline import fit_models

    cfg, uni, bounds, lead, fm = _prepared(args)
    if args.evals is not None:
        cfg.hpo_evals = args.evals
    cfg.validate()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _, searches = fit_models(fm, bounds, lead, cfg, out)
    (out / "search.json").write_text(json.dumps(searches, indent=2, sort_keys=True) + "\n")
    for key, s in searches.items():
        print(f"{key}: best trial {s['best_trial']} val MSE {s['best_loss']:.6g} {s['best_params']}")


def cmd_backtest(args) -> None:
    from .backtest import write_returns, write_summary
    from .neural import load_model
    from .pipeline import POOLED, build_context, decision_windows, run_period
    from .portfolio import write_weights

    cfg, uni, bounds, lead, fm = _prepared(args)
    models = {}
    model_path = Path(args.model)
    if model_path.is_dir():
        for p in sorted(model_path.glob("model*.npz")):
            key = POOLED if p.stem == "model" else p.stem[len("model_"):]
            models[key] = load_model(p)
    else:
        models[POOLED] = load_model(model_path)
    if not models:
        raise FileNotFoundError(f"no model files under {model_path}")
    windows = decision_windows(bounds, lead, uni.n_months)
    ctx = build_context(uni, bounds, models, cfg, [t for w in windows.values() for t in w], fm)
    out = Path(args.out)
    for period, window in windows.items():
        pdir = out / period.lower()
        pdir.mkdir(parents=True, exist_ok=True)
        results, _ = run_period(uni, window, ctx, cfg, keep_weights=cfg.write_weights)
        write_returns(results, pdir / "returns.csv")
        write_summary(results, pdir / "summary.csv")
        if cfg.write_weights:
            write_weights([pw for r in results for pw in r.weights], uni.tickers,
                          pdir / "weights.csv")
        print(f"{period}: {len(results)} backtests over {len(window)} months -> {pdir}")


def cmd_report(args) -> None:
    from .backtest import read_summary
    from .metrics import build_report, write_report
    from .plotting import risk_return_plot

    src = Path(args.results)
    out = Path(args.out or args.results)
    out.mkdir(parents=True, exist_ok=True)
    curves = {}
    for period in ("IS", "OOS"):
        path = src / period.lower() / "summary.csv"
        if path.exists():
            curves[period] = read_summary(path)
    if not curves:
        raise FileNotFoundError(f"no summary.csv under {src}/is or {src}/oos")
    reports = [build_report(p, c) for p, c in curves.items() if "DEWSP" in c]
    write_report(reports, out / "metrics.json")
    risk_return_plot(curves, out / "risk_return.svg")
    _print_reports(reports)


def _print_reports(reports) -> None:
    for r in reports:
        def f(x):
            return "undefined" if x is None else f"{x:.2f}"
        print(f"{r.period}: APC_r {f(r.apc_r)}%  APC_sigma {f(r.apc_sigma)}%  "
              f"ratio {f(r.apc_ratio)}  "
              + "  ".join(f"ASRIR[{k}] {f(v)}%" for k, v in r.asrir.items()))
        for flag in r.flags:
            print(f"  note: {flag}")


def cmd_run(args) -> None:
    from .pipeline import config_from_manifest, run_pipeline

    if args.manifest:
        cfg = config_from_manifest(args.manifest)
        if args.seed is not None:
            cfg.seed = args.seed
    else:
        cfg = _config(args)
    out = args.out or cfg.out_dir
    res = run_pipeline(cfg, out, plot=not args.no_plot)
    _print_reports(res.reports.values())
    print(f"outputs in {out}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dewsp", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic market as per-ticker CSVs")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("ingest", help="load CSVs, resample to month ends, align")
    s.add_argument("--input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--start")
    s.add_argument("--end")
    s.add_argument("--tickers", help="comma-separated subset")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("features", help="export the signal feature matrix")
    s.add_argument("--universe", required=True)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_features)

    s = sub.add_parser("tune", help="TPE search and training")
    s.add_argument("--universe", required=True)
    s.add_argument("--config")
    s.add_argument("--evals", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_tune)

    s = sub.add_parser("backtest", help="backtest every family over IS and OOS")
    s.add_argument("--universe", required=True)
    s.add_argument("--model", required=True, help="model file or tune output directory")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_backtest)

    s = sub.add_parser("report", help="metrics and risk-return plot from backtest summaries")
    s.add_argument("--results", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("run", help="full pipeline from a config or a manifest")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--config")
    g.add_argument("--manifest")
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.add_argument("--no-plot", action="store_true")
    s.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except DewspError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

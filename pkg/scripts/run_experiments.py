"""Run the three experiment configs and print one metrics table.

    python3 scripts/run_experiments.py [--evals 50] [--out runs]
"""

import argparse
import logging
from pathlib import Path

from dewsp.config import RunConfig
from dewsp.pipeline import run_pipeline

ROOT = Path(__file__).resolve().parent.parent


def fmt(x):
    return "   n/a" if x is None else f"{x:6.2f}"


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--configs", nargs="+",
                   default=[str(ROOT / "configs" / f"exp{i}.toml") for i in (1, 2, 3)])
    p.add_argument("--evals", type=int, help="override the search budget")
    p.add_argument("--out", default="runs")
    args = p.parse_args()
    logging.basicConfig(level=logging.WARNING)

    print(f"{'experiment':<10} {'period':<6} {'APC_r%':>7} {'APC_s%':>7} {'ratio':>7} "
          f"{'ASRIR TV%':>10} {'ASRIR T%':>9} {'ASRIR V%':>9}")
    for path in args.configs:
        cfg = RunConfig.load(path)
        if args.evals:
            cfg.hpo_evals = args.evals
        name = Path(path).stem
        res = run_pipeline(cfg, Path(args.out) / name)
        for period, rep in res.reports.items():
            a = rep.asrir
            print(f"{name:<10} {period:<6} {fmt(rep.apc_r):>7} {fmt(rep.apc_sigma):>7} "
                  f"{fmt(rep.apc_ratio):>7} {fmt(a.get('HEWSP-TV')):>10} "
                  f"{fmt(a.get('HEWSP-T')):>9} {fmt(a.get('HEWSP-V')):>9}")


if __name__ == "__main__":
    main()

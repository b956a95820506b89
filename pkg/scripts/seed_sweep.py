"""Repeat the default synthetic experiment over several seeds and summarize the sign pattern.

    python3 scripts/seed_sweep.py --seeds 0 1 2 3 4 [--evals 50]
"""

import argparse
import logging
import statistics
import time
from pathlib import Path

from dewsp.config import RunConfig
from dewsp.pipeline import run_pipeline


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p.add_argument("--evals", type=int, default=50)
    p.add_argument("--out", default="runs/seed_sweep")
    args = p.parse_args()
    logging.basicConfig(level=logging.WARNING)

    asrir = {"IS": [], "OOS": []}
    for seed in args.seeds:
        t0 = time.perf_counter()
        cfg = RunConfig(seed=seed, synth_seed=seed, hpo_evals=args.evals, write_weights=False)
        res = run_pipeline(cfg, Path(args.out) / f"seed{seed}", plot=False)
        for period, rep in res.reports.items():
            asrir[period].append(rep.asrir["HEWSP-TV"])
            print(f"seed {seed} {period:<3} APC_r {rep.apc_r:6.2f}%  APC_sigma {rep.apc_sigma:6.2f}%  "
                  f"ASRIR[HEWSP-TV] {rep.asrir['HEWSP-TV']:7.2f}%")
        print(f"  ({time.perf_counter() - t0:.0f}s)")
    for period, values in asrir.items():
        print(f"median ASRIR[HEWSP-TV] {period}: {statistics.median(values):.2f}%")


if __name__ == "__main__":
    main()

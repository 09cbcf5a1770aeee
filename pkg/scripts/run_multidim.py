#!/usr/bin/env python3
"""Reproduce the multidimensional study with known exact solution Y0 = 1/2.

Sweeps the per-layer grid size, fits the error-vs-size rate, and writes a
CSV/JSON report to --out.
"""

import argparse
import json

from quantschemes.experiments import ExperimentConfig, run_multidim


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--dim", type=int, default=2)
    ap.add_argument("--n", type=int, default=10, help="time steps")
    ap.add_argument("--mc-paths", type=int, default=1_000_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--sweep", type=int, nargs="*",
                    default=[10, 25, 50, 100, 150])
    ap.add_argument("--workers", type=int, default=0,
                    help="0 = one process per sweep point")
    ap.add_argument("--out", default="results/multidim")
    args = ap.parse_args()
    cfg = ExperimentConfig(name="multidim", n=args.n, dim=args.dim,
                           mc_paths=args.mc_paths, seed=args.seed,
                           sweep=args.sweep, workers=args.workers,
                           out=args.out)
    report = run_multidim(cfg)
    print(json.dumps({k: v for k, v in report.items() if k != "provenance"},
                     indent=2, default=float))


if __name__ == "__main__":
    main()

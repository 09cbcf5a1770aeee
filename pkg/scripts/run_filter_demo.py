#!/usr/bin/env python3
"""Scalar filtering demo: quantized filter vs the closed-form posterior.

For the linear-gaussian model the reference is the exact Kalman posterior;
for sin-cube it is a high-resolution self-reference run. Sweeps the grid
size, fits the convergence rate, and writes a CSV/JSON report to --out.
"""

import argparse
import json

from quantschemes.experiments import ExperimentConfig, run_filter_demo


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--model", default="linear-gaussian",
                    choices=["linear-gaussian", "sin-cube"])
    ap.add_argument("--n", type=int, default=10, help="time steps")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--sweep", type=int, nargs="*",
                    default=[10, 25, 50, 100, 200])
    ap.add_argument("--out", default="results/filter-demo")
    args = ap.parse_args()
    cfg = ExperimentConfig(name="filter-demo", n=args.n, model=args.model,
                           seed=args.seed, sweep=args.sweep, out=args.out)
    report = run_filter_demo(cfg)
    print(json.dumps({k: v for k, v in report.items() if k != "provenance"},
                     indent=2, default=float))


if __name__ == "__main__":
    main()

"""Command-line entry point.

Subcommands: grid (build and save an optimal grid), chain (build and save a
quantized chain for a builtin state model), bsde-bidask / bsde-multidim /
filter-demo (reference experiments), rate-fit (regression over an existing
(N, error) table). Exit codes: 0 success, 2 validation error, 3
numeric/convergence error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .chain import (DiffusionModel, TimeMesh, build_layer_grids,
                    estimate_companions, save_chain)
from .errors import InputError, NumericError, QuantError
from .experiments import (ExperimentConfig, fit_rate, run_bidask,
                          run_filter_demo, run_multidim)
from .grids import (Grid, Law1D, SampleSource, StopCriteria, clvq,
                    distortion_and_gradient, lloyd, load_grid, newton_1d,
                    save_grid)


def _parse_sweep(text: str) -> list[int]:
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise InputError("sweep must be start:stop:step or a,b,c")
        a, b, c = (int(p) for p in parts)
        if c < 1 or b < a:
            raise InputError("sweep needs stop >= start and step >= 1")
        return list(range(a, b + 1, c))
    return [int(p) for p in text.split(",") if p]


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read config: {exc}")
    except json.JSONDecodeError as exc:
        raise InputError(f"config is not valid JSON: {exc}")
    if not isinstance(cfg, dict):
        raise InputError("config must be a JSON object")
    return cfg


def _experiment_config(name: str, cfg: dict, args,
                       default_n: int) -> ExperimentConfig:
    known = {"n", "grid_size", "sizes", "mc_paths", "seed", "sweep", "out",
             "dim", "model", "base_batch", "workers"}
    extra = {k: v for k, v in cfg.items() if k in known}
    ec = ExperimentConfig(name=name, n=int(cfg.get("n", default_n)),
                          **{k: v for k, v in extra.items() if k != "n"})
    if args.seed is not None:
        ec.seed = args.seed
    if args.mc_paths is not None:
        ec.mc_paths = args.mc_paths
    if args.grid_size is not None:
        ec.grid_size = args.grid_size
    if args.sizes is not None:
        ec.sizes = [int(v) for v in args.sizes.split(",")]
    if args.sweep is not None:
        ec.sweep = _parse_sweep(args.sweep)
    if args.out is not None:
        ec.out = args.out
    # re-validate after overrides
    ec.__post_init__()
    return ec


def _cmd_grid(args) -> int:
    cfg = _load_config(args.config)
    if "input" in cfg:
        grid = load_grid(cfg["input"], legacy_layout=args.legacy_layout)
        print(json.dumps({"size": grid.size, "dim": grid.dim,
                          "has_weights": grid.weights is not None}))
        return 0
    law = cfg.get("law", "gaussian")
    dim = int(cfg.get("dim", 1))
    size = args.grid_size or int(cfg.get("size", 100))
    method = cfg.get("method", "newton" if dim == 1 else "lloyd")
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    batch_size = int(cfg.get("batch_size", 1_000_000))
    if method == "newton":
        if dim != 1:
            raise InputError("newton method is one-dimensional")
        law1d = {"gaussian": Law1D.gaussian,
                 "uniform": Law1D.uniform01}.get(law)
        if law1d is None:
            raise InputError(f"unknown law {law!r}")
        grid = newton_1d(law1d(), size)
    elif method in ("lloyd", "clvq"):
        source = SampleSource(law=law, dim=dim, seed=seed)
        init = Grid(source.draw(size))
        if method == "lloyd":
            frozen = SampleSource.from_batch(source.draw(batch_size))
            grid, _, _ = lloyd(init, frozen, StopCriteria())
        else:
            grid = clvq(init, source, steps=int(cfg.get("steps", 500_000)))
    else:
        raise InputError(f"unknown method {method!r}")
    outdir = Path(args.out or ".")
    outdir.mkdir(parents=True, exist_ok=True)
    path = outdir / "grid.txt"
    save_grid(grid, path)
    report = distortion_and_gradient(
        grid, SampleSource(law=law, dim=dim, seed=seed + 1))
    print(json.dumps({"size": grid.size, "dim": grid.dim,
                      "distortion": report.value, "path": str(path)}))
    return 0


_CHAIN_MODELS = {"gbm", "brownian", "ou"}


def _chain_model(cfg: dict) -> tuple[DiffusionModel, TimeMesh]:
    name = cfg.get("model", "brownian")
    if name not in _CHAIN_MODELS:
        raise InputError(f"model must be one of {sorted(_CHAIN_MODELS)}")
    T = float(cfg.get("T", 1.0))
    n = int(cfg.get("n", 10))
    if name == "gbm":
        mu, sig = float(cfg.get("mu", 0.05)), float(cfg.get("sigma", 0.2))
        x0 = [float(cfg.get("x0", 100.0))]
        model = DiffusionModel(1, 1, lambda t, x: mu * x,
                               lambda t, x: sig * x[..., None], x0,
                               lip_b=abs(mu), lip_sigma=abs(sig))
    elif name == "ou":
        kap, sig = float(cfg.get("kappa", 1.0)), float(cfg.get("sigma", 1.0))
        x0 = [float(cfg.get("x0", 0.0))]
        model = DiffusionModel(1, 1, lambda t, x: -kap * x,
                               lambda t, x: sig * np.ones(x.shape + (1,)), x0,
                               lip_b=abs(kap), lip_sigma=0.0)
    else:
        d = int(cfg.get("dim", 1))
        model = DiffusionModel(
            d, d, lambda t, x: np.zeros_like(x),
            lambda t, x: np.broadcast_to(np.eye(d), x.shape + (d,)),
            np.zeros(d))
    return model, TimeMesh(T, n)


def _cmd_chain(args) -> int:
    cfg = _load_config(args.config)
    model, mesh = _chain_model(cfg)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    mc = args.mc_paths if args.mc_paths is not None \
        else int(cfg.get("mc_paths", 1_000_000))
    if args.sizes is not None:
        sizes = [int(v) for v in args.sizes.split(",")]
    elif "sizes" in cfg:
        sizes = [int(v) for v in cfg["sizes"]]
    else:
        size = args.grid_size or int(cfg.get("grid_size", 50))
        sizes = [1] + [size] * mesh.steps
    layers = build_layer_grids(model, mesh, sizes, method="lloyd-on-samples",
                               sample_budget=int(cfg.get("sample_budget",
                                                         100_000)),
                               seed=seed)
    chain = estimate_companions(model, mesh, layers, mc, seed,
                                center=bool(cfg.get("center", True)))
    outdir = Path(args.out or ".")
    outdir.mkdir(parents=True, exist_ok=True)
    path = outdir / ("chain.bin" if args.binary else "chain.txt")
    save_chain(chain, path, binary=args.binary)
    print(json.dumps({
        "path": str(path), "sizes": chain.sizes, "mc_paths": mc,
        "seed": seed, "centered": chain.centered,
        "dead_rows": [int(d.size) for d in chain.dead_rows]}))
    return 0


def _cmd_rate_fit(args) -> int:
    cfg = _load_config(args.config)
    exponent = float(cfg.get("exponent", -1.0))
    if "pairs" in cfg:
        pairs = [(float(a), float(b)) for a, b in cfg["pairs"]]
    elif "csv" in cfg:
        ncol, ecol = cfg.get("n_column", "N"), cfg.get("error_column", "error")
        try:
            with open(cfg["csv"]) as fh:
                rows = list(csv.DictReader(fh))
        except OSError as exc:
            raise InputError(f"cannot read csv: {exc}")
        try:
            pairs = [(float(r[ncol]), float(r[ecol])) for r in rows]
        except (KeyError, ValueError) as exc:
            raise InputError(f"bad csv columns: {exc}")
    else:
        raise InputError("rate-fit config needs 'pairs' or 'csv'")
    fit = fit_rate(pairs, exponent)
    out = asdict(fit)
    if args.out:
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        with open(outdir / "rate_fit.json", "w") as fh:
            json.dump(out, fh, indent=2)
    print(json.dumps(out))
    return 0


def _cmd_experiment(args, name: str, runner, default_n: int) -> int:
    cfg = _load_config(args.config)
    ec = _experiment_config(name, cfg, args, default_n)
    report = runner(ec)
    summary = {k: v for k, v in report.items() if k != "rows"}
    summary["rows"] = report["rows"]
    print(json.dumps(summary, default=float))
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="quantschemes",
        description="Optimal-quantization schemes: grids, chains, backward "
                    "solvers, filtering, and reference experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("grid", "chain", "bsde-bidask", "bsde-multidim",
                 "filter-demo", "rate-fit"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--mc-paths", type=int, dest="mc_paths")
        p.add_argument("--grid-size", type=int, dest="grid_size")
        p.add_argument("--sizes", help="comma-separated per-layer sizes")
        p.add_argument("--sweep", help="start:stop:step or comma list")
        p.add_argument("--out", help="output directory")
        p.add_argument("--legacy-layout", action="store_true",
                       dest="legacy_layout",
                       help="read grid files with separate point/weight blocks")
        p.add_argument("--binary", action="store_true",
                       help="write chain files in binary")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "grid":
            return _cmd_grid(args)
        if args.command == "chain":
            return _cmd_chain(args)
        if args.command == "rate-fit":
            return _cmd_rate_fit(args)
        if args.command == "bsde-bidask":
            return _cmd_experiment(args, "bidask", run_bidask, 20)
        if args.command == "bsde-multidim":
            return _cmd_experiment(args, "multidim", run_multidim, 10)
        if args.command == "filter-demo":
            return _cmd_experiment(args, "filter-demo", run_filter_demo, 10)
        raise InputError(f"unknown command {args.command!r}")
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except QuantError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

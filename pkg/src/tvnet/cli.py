"""Command-line entry point: train, eval, gradcheck, ablate, bench, synth.

Exit codes: 0 success, 1 configuration error, 2 runtime failure or divergence,
3 failed check.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import bench, checks, data as D
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import TASKS, TaskConfig
from .embedding import ConfigError
from .experiments import ABLATIONS, apply_ablation, ablation_grid, seasonal_bundle, synthetic_forecast_config
from .heads import anomaly_pipeline
from .metrics import MetricReport
from .trainer import TrainingDiverged, evaluate, train

EXIT_CONFIG, EXIT_RUNTIME, EXIT_CHECK = 1, 2, 3
GRADCHECK_TOL = 1e-4


class CheckFailed(Exception):
    pass


def dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2)


def _write(out: Optional[str], name: str, text: str) -> None:
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / name).write_text(text + "\n")


# -- argument plumbing ----------------------------------------------------------------

def resolve_config(args) -> TaskConfig:
    overrides = {}
    if getattr(args, "horizon", None) is not None:
        overrides["horizon"] = args.horizon
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    data = getattr(args, "data", None)
    if data and Path(data).suffix == ".json" and Path(data).exists():
        # per-task defaults shipped with the dataset sit below the config file and flags
        task = args.task or "long_forecast"
        overrides = {**D.DatasetDescriptor.from_json(data).task_defaults.get(task, {}), **overrides}
    if args.config:
        config = TaskConfig.from_json(args.config)
        if args.task and args.task != config.task:
            raise ConfigError(f"--task {args.task} conflicts with config task {config.task}")
        config = config.replace(**overrides) if overrides else config
    else:
        config = TaskConfig.for_task(args.task or "long_forecast", **overrides)
    return apply_ablation(config, getattr(args, "ablation", "none") or "none")


def load_data(path: Optional[str], config: TaskConfig):
    """Dataset descriptor (.json), numeric CSV (.csv) or labelled arrays (.npz, classification)."""
    if not path:
        raise ConfigError("--data is required")
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"dataset not found: {p}")
    if p.suffix == ".json":
        return D.load_bundle(D.DatasetDescriptor.from_json(p))
    if p.suffix == ".npz":
        arrays = np.load(p)
        keys = ("x_train", "y_train", "x_val", "y_val", "x_test", "y_test")
        missing = [k for k in keys if k not in arrays]
        if missing:
            raise ConfigError(f"{p}: missing arrays {missing}")
        return D.ClassificationSet.from_arrays(*(arrays[k] for k in keys))
    if config.task == "classification":
        raise ConfigError("classification data must be an .npz file with x_*/y_* arrays")
    return D.split_normalize(D.load_csv(p), name=p.stem)


def _metric_reports(metrics: dict, split: str, task: str) -> list:
    count = int(metrics.get("count", 0))
    return [MetricReport(k, float(v), count, {"split": split, "task": task}).to_dict()
            for k, v in sorted(metrics.items()) if k != "count" and isinstance(v, (int, float))]


def _anomaly_summary(model, bundle, config: TaskConfig) -> dict:
    result = anomaly_pipeline(bundle.segment("test"), model, [bundle.segment("train"), bundle.segment("val")],
                              config.anomaly_ratio)
    return {"threshold": result.threshold, "flagged": int(result.labels.sum()), "steps": int(result.labels.size)}


# -- commands -----------------------------------------------------------------------------

def cmd_train(args) -> int:
    config = resolve_config(args)
    bundle = load_data(args.data, config)
    try:
        model, history = train(config, bundle, verbose=args.verbose)
    except TrainingDiverged as exc:
        if args.out and exc.last_good_state is not None:
            _write(args.out, "history.json", dump_json(exc.history))
        raise
    metrics = evaluate(model, bundle, config, "test")
    if config.task == "anomaly":
        metrics.update(_anomaly_summary(model, bundle, config))
    metrics["best_val_loss"] = model.best_val_loss
    metrics["epochs"] = len(history)
    text = dump_json(metrics)
    print(text)
    if args.out:
        _write(args.out, "metrics.json", text)
        save_checkpoint(model, Path(args.out) / "model.ckpt")
        _write(args.out, "history.json", dump_json(history))
        _write(args.out, "config.json", dump_json(config.to_dict()))
    return 0


def cmd_eval(args) -> int:
    try:
        model = load_checkpoint(args.checkpoint)
    except (OSError, CheckpointError) as exc:
        raise ConfigError(f"cannot load checkpoint {args.checkpoint}: {exc}") from exc
    config = model.config
    bundle = load_data(args.data, config)
    metrics = evaluate(model, bundle, config, args.split)
    reports = _metric_reports(metrics, args.split, config.task)
    text = dump_json(reports)
    print(text)
    _write(args.out, "reports.json", text)
    return 0


def cmd_gradcheck(args) -> int:
    results = checks.gradient_suite(seed=args.seed or 0)
    worst = max(results.values())
    for name, err in results.items():
        print(f"{name:<20s} {err:.3e} {'ok' if err < GRADCHECK_TOL else 'FAIL'}")
    print(f"max relative error {worst:.3e}")
    _write(args.out, "gradcheck.json", dump_json(results))
    if worst >= GRADCHECK_TOL:
        raise CheckFailed(f"gradient check failed: {worst:.3e} >= {GRADCHECK_TOL}")
    return 0


def cmd_ablate(args) -> int:
    if args.data:
        config = resolve_config(args)
        bundle = load_data(args.data, config)
    else:
        config = synthetic_forecast_config(**({"seed": args.seed} if args.seed is not None else {}))
        bundle = seasonal_bundle()
    variants = tuple(ABLATIONS) if args.ablation in (None, "none") else ("none", args.ablation)
    base = config.replace(use_dynamic=True, use_inter=True)
    grid = ablation_grid(base, bundle, variants)
    print(f"{'variant':<12s} {'mse':>10s} {'mae':>10s}")
    for name, row in grid.items():
        print(f"{name:<12s} {row['mse']:10.6f} {row['mae']:10.6f}")
    _write(args.out, "ablation.json", dump_json(grid))
    return 0


def cmd_bench(args) -> int:
    config = resolve_config(args) if args.config else synthetic_forecast_config()
    L = config.effective_seq_len()
    report = bench.count_costs(config.c_m or 64, config.kernel_size, L, L // config.patch_len, config.patch_len)
    print(dump_json(report.to_dict()))
    seq_lens = [int(s) for s in args.seq_lens.split(",")]
    rows = bench.measure_scaling(seq_lens, c_m=config.c_m or 64, k=config.kernel_size,
                                 patch_len=config.patch_len, n_blocks=config.n_blocks,
                                 horizon=config.horizon or 96, trials=args.trials)
    for row in rows:
        print(",".join(str(row[k]) for k in ("L_in", "flops", "params", "ms", "bytes")))
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        bench.write_scaling_csv(rows, Path(args.out) / "scaling.csv")
        _write(args.out, "costs.json", dump_json(report.to_dict()))
    return 0


def cmd_synth(args) -> int:
    if not args.out:
        raise ConfigError("synth needs --out")
    seed = args.seed or 0
    if args.kind == "sines":
        values, cols = D.sum_of_sines(args.length, n_vars=args.n_vars, noise=args.noise, seed=seed), None
    elif args.kind == "seasonal":
        values = D.seasonal_multiplicative(args.length, drift_period=500.0, n_vars=args.n_vars,
                                           noise=args.noise, seed=seed)
        cols = None
    else:
        clean = D.sum_of_sines(args.length, n_vars=args.n_vars, noise=args.noise, seed=seed)
        series, labels = D.inject_spikes(clean, 0.01, 6.0, seed=seed + 1)
        values = np.column_stack([series, labels.astype(float)])
        cols = [f"x{i}" for i in range(args.n_vars)] + ["label"]
    path = Path(args.out)
    if path.suffix != ".csv":
        path.mkdir(parents=True, exist_ok=True)
        path = path / f"{args.kind}.csv"
    D.save_csv(path, values, cols)
    print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tvnet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True):
        p.add_argument("--config", help="JSON file with TaskConfig fields")
        if data:
            p.add_argument("--data", help="dataset descriptor (.json), CSV, or .npz for classification")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--task", choices=TASKS)
        p.add_argument("--horizon", type=int)
        p.add_argument("--ablation", choices=sorted(ABLATIONS), default="none")
        p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("train", help="fit a model, write checkpoint and metrics")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    common(p, data=False)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="full vs no-inter-pool vs no-dynamic")
    common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("bench", help="closed-form costs and a scaling table")
    common(p, data=False)
    p.add_argument("--seq-lens", default="96,192,384,768")
    p.add_argument("--trials", type=int, default=5)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("synth", help="write a synthetic CSV")
    common(p, data=False)
    p.add_argument("--kind", choices=("sines", "seasonal", "spikes"), default="sines")
    p.add_argument("--length", type=int, default=2000)
    p.add_argument("--n-vars", type=int, default=1)
    p.add_argument("--noise", type=float, default=0.0)
    p.set_defaults(func=cmd_synth)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else 0
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, D.DataFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckFailed as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except (TrainingDiverged, FloatingPointError, ValueError, RuntimeError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run())

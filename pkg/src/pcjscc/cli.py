"""Command-line entry point: ``pcjscc <subcommand>``.

Every subcommand writes into ``--out-dir`` and prints one JSON summary line
on stdout. Failures print one JSON line ``{"error": ..., "message": ...}``
on stderr and exit nonzero.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import channel as ch
from .model import Transceiver, load_checkpoint
from .pipeline import (Dataset, DatasetSpec, SweepEntry, SweepResult, emit_report,
                       load_dataset, run_sweep, verify_aggregates)
from .synthetic import default_recipe
from .training import (TrainConfig, dump_config, gradcheck, load_config, small_config,
                       train)

DEFAULT_SNRS = (0.0, 5.0, 10.0, 15.0, 20.0)


class CliError(RuntimeError):
    pass


def _snr(text: str) -> float:
    if text.lower() in ("inf", "+inf", "noiseless"):
        return ch.NOISELESS
    return float(text)


def _snr_list(text: str) -> list:
    return [_snr(t) for t in text.split(",") if t.strip()]


def _emit(payload: dict) -> None:
    print(json.dumps(payload, default=_jsonable, sort_keys=True))


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, Path):
        return str(v)
    raise TypeError(type(v).__name__)


def _finite(x: float):
    return x if math.isfinite(x) else str(x)


# -- subcommands ---------------------------------------------------------

def cmd_gen_data(args) -> dict:
    if args.source == "directory" and not args.path:
        raise CliError("--path is required with --source directory")
    spec = DatasetSpec(source=args.source, path=args.path, num_points=args.num_points,
                       recipe=default_recipe(args.per_family), data_seed=args.seed,
                       split_seed=args.seed, test_fraction=args.test_fraction)
    ds = load_dataset(spec)
    path = args.out_dir / "dataset.npz"
    ds.save(path)
    return {"dataset": path, "train": len(ds.train), "test": len(ds.test),
            "num_points": spec.num_points}


def _train_config(args) -> TrainConfig:
    cfg = load_config(args.config) if args.config else TrainConfig()
    overrides = {"seed": args.seed, "deterministic": args.deterministic}
    for name in ("epochs", "warmup_epochs", "lr_init", "batch_size", "beta"):
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value
    if args.snr is not None:
        overrides["train_snr_db"] = args.snr
    if args.no_ort:
        overrides["no_ort"] = True
    if args.no_folding:
        overrides["no_folding"] = True
    cfg = replace(cfg, **overrides)
    if args.bandwidth is not None:
        cfg = replace(cfg, model=replace(cfg.model, bandwidth_n=args.bandwidth))
    return cfg


def cmd_train(args) -> dict:
    ds = Dataset.load(args.data)
    cfg = _train_config(args)
    dump_config(cfg, args.out_dir / "train.cfg")
    model, hist = train(ds.train, cfg, test_set=ds.test if len(ds.test) else None,
                        out_dir=args.out_dir)
    return {"checkpoint": args.out_dir / "final.npz", "epochs": cfg.epochs,
            "final_loss": float(hist.column("train_loss")[-1]),
            "final_val_cd": _finite(float(hist.column("val_cd")[-1]))}


def _write_sweep(result: SweepResult, out_dir: Path) -> dict:
    result.write_csv(out_dir)
    agg = result.aggregate()
    return {"per_sample": out_dir / "per_sample.csv", "aggregate": out_dir / "aggregate.csv",
            "cells": len(agg),
            "mean_cd": {f"{r['label']}@{r['snr_db']:g}": r["mean_cd"] for r in agg}}


def cmd_evaluate(args) -> dict:
    ds = Dataset.load(args.data)
    model = load_checkpoint(args.checkpoint)
    entry = SweepEntry(args.variant, model.config.bandwidth_n, model)
    result = run_sweep([entry], args.snrs, ds.test, seed=args.seed, p=args.peak)
    return _write_sweep(result, args.out_dir)


def _parse_entry(text: str) -> SweepEntry:
    parts = text.split(":", 2)
    if len(parts) != 3:
        raise CliError(f"checkpoint spec {text!r} must be VARIANT:BANDWIDTH:PATH")
    variant, bw, path = parts
    return SweepEntry(variant, int(bw), Path(path))


def cmd_sweep(args) -> dict:
    ds = Dataset.load(args.data)
    entries = [_parse_entry(t) for t in args.checkpoint]
    result = run_sweep(entries, args.snrs, ds.test, seed=args.seed, p=args.peak)
    summary = _write_sweep(result, args.out_dir)
    if args.report:
        summary["plots"] = [p for p in emit_report(result, args.out_dir) if p.suffix == ".png"]
    return summary


def cmd_gradcheck(args) -> dict:
    if args.checkpoint:
        model = load_checkpoint(args.checkpoint)
    else:
        model = Transceiver(small_config(), seed=args.seed)
    m = model.config.num_points
    sample = np.random.default_rng(args.seed).uniform(-1, 1, (m, 3))
    report = gradcheck(model, sample, beta=args.beta, eps=args.eps, threshold=args.threshold)
    out = {"passed": report.passed, "max_rel_error": report.max_rel_error,
           "rel_errors": report.rel_errors, "num_checked": report.num_checked}
    (args.out_dir / "gradcheck.json").write_text(json.dumps(out, indent=2, sort_keys=True))
    if not report.passed:
        raise CliError(f"gradient check failed: max relative error {report.max_rel_error:.3e}"
                       f" >= {report.threshold:g}")
    return out


def cmd_report(args) -> dict:
    result = SweepResult.load(args.sweep_dir)
    written = emit_report(result, args.out_dir, stat=args.stat)
    return {"files": written}


def cmd_verify(args) -> dict:
    problems = verify_aggregates(args.sweep_dir)
    if problems:
        raise CliError(f"{len(problems)} aggregate mismatches; first: {problems[0]}")
    return {"ok": True}


# -- parser --------------------------------------------------------------

def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # subcommand copies use SUPPRESS so they never overwrite flags given before the subcommand
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=d(None),
                        help="training config file (key = value)")
    common.add_argument("--seed", type=int, default=d(0))
    common.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=d(True))
    common.add_argument("--out-dir", type=Path, default=d(Path(".")))
    common.add_argument("-v", "--verbose", action="store_true", default=d(False))
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags(suppress=True)
    parser = argparse.ArgumentParser(prog="pcjscc", parents=[_global_flags(suppress=False)],
                                     description="Point-cloud semantic transmission experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="build a train/test dataset file")
    p.add_argument("--source", choices=("synthetic", "directory"), default="synthetic")
    p.add_argument("--path")
    p.add_argument("--num-points", type=int, default=2048)
    p.add_argument("--per-family", type=int, default=64)
    p.add_argument("--test-fraction", type=float, default=0.125)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", parents=[common], help="train a transceiver")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--warmup-epochs", type=int)
    p.add_argument("--lr-init", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--beta", type=float)
    p.add_argument("--snr-db", "--snr", dest="snr", type=_snr, help="training SNR in dB")
    p.add_argument("--bandwidth", type=int)
    p.add_argument("--no-ort", action="store_true")
    p.add_argument("--no-folding", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="metrics of one checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--snrs", type=_snr_list, default=list(DEFAULT_SNRS))
    p.add_argument("--variant", default="ours")
    p.add_argument("--peak", type=float, default=1.0, help="PSNR peak value p")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", parents=[common], help="SNR sweep over several checkpoints")
    p.add_argument("--checkpoint", action="append", required=True,
                   metavar="VARIANT:BANDWIDTH:PATH")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--snrs", type=_snr_list, default=list(DEFAULT_SNRS))
    p.add_argument("--peak", type=float, default=1.0, help="PSNR peak value p")
    p.add_argument("--report", action="store_true", help="also write plots")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--threshold", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("report", parents=[common], help="plots from a sweep directory")
    p.add_argument("--sweep-dir", type=Path, required=True)
    p.add_argument("--stat", choices=("mean", "median"), default="mean")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("verify-aggregates", parents=[common],
                       help="recompute aggregates from per-sample rows")
    p.add_argument("--sweep-dir", type=Path, required=True)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code not in (0, None):
            print(json.dumps({"error": "UsageError", "message": "invalid arguments"}),
                  file=sys.stderr)
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.out_dir.mkdir(parents=True, exist_ok=True)
        _emit({"command": args.command, **args.func(args)})
    except Exception as exc:  # every failure becomes one machine-readable line
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Command line: ``mdf generate | train | eval | ablate``.

Exit codes: 0 success, 2 bad arguments/config, 3 unreadable or corrupted
input, 4 training diverged, 5 refused to overwrite an existing output.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, RunConfig, load, packaged
from .data import DataError, generate
from .io import (FormatError, IntegrityError, dump_json, load_checkpoint, load_dataset,
                 read_dataset_manifest, save_dataset, sha256_file)
from .runs import (confusion_csv, eval_report, nan_to_none, train_run, validate_run_dir)
from .train import TrainingDiverged

log = logging.getLogger("mdf")

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_DIVERGED, EXIT_EXISTS = 0, 2, 3, 4, 5
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _setup_logging():
    name = os.environ.get("MDF_LOG", "info").lower()
    if name not in LOG_LEVELS:
        raise CliError(f"MDF_LOG must be one of {sorted(LOG_LEVELS)}, got {name!r}", EXIT_USAGE)
    logging.basicConfig(level=LOG_LEVELS[name], format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr, force=True)


def _config(args) -> RunConfig:
    return load(args.config) if args.config else packaged("default")


def _fresh_dir(path: Path, force: bool):
    if path.exists():
        if not force:
            raise CliError(f"output {path} already exists (resume is not supported; "
                           f"pass --force to overwrite)", EXIT_EXISTS)
        if path.is_dir():
            shutil.rmtree(path)
        else:
            path.unlink()
    path.mkdir(parents=True)


def _dataset(path):
    if path is None:
        raise CliError("--dataset is required", EXIT_USAGE)
    return load_dataset(path), sha256_file(path)


def cmd_generate(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    for p in (out, out.with_name(out.name + ".json")):
        if p.exists() and not args.force:
            raise CliError(f"output {p} already exists; pass --force to overwrite", EXIT_EXISTS)
    out.parent.mkdir(parents=True, exist_ok=True)
    bundle = generate(**cfg.data.generate_kwargs())
    manifest = save_dataset(bundle, out)
    counts = bundle.train.class_counts(bundle.n_classes).tolist()
    log.info("wrote %s: %d pairs, train class counts %s", out, manifest["n_pairs"], counts)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    bundle, sha = _dataset(args.dataset)
    out = Path(args.out)
    _fresh_dir(out, args.force)
    try:
        train_run(bundle, cfg.train, out, data_seed=bundle.seed, dataset_path=args.dataset,
                  dataset_sha256=sha, run_config=cfg.to_dict())
    except TrainingDiverged as exc:
        raise CliError(f"{exc} (partial history in {out})", EXIT_DIVERGED) from None
    try:
        validate_run_dir(out)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_INPUT) from None
    log.info("run written to %s (mode %s)", out, cfg.train.mode)
    return EXIT_OK


def cmd_eval(args) -> int:
    if args.checkpoint is None:
        raise CliError("--checkpoint is required", EXIT_USAGE)
    bundle, _ = _dataset(args.dataset)
    model, header = load_checkpoint(args.checkpoint)
    ds_version = read_dataset_manifest(args.dataset)["format_version"]
    if header.get("dataset_format_version") != ds_version:
        raise CliError(f"checkpoint was written against dataset format version "
                       f"{header.get('dataset_format_version')}, dataset file is version "
                       f"{ds_version}", EXIT_INPUT)
    try:
        report = eval_report(model, bundle, args.split, args.fuse)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_INPUT) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    metrics_path = out / f"metrics_{args.split}.json"
    conf_path = out / f"confusion_{args.split}.csv"
    for p in (metrics_path, conf_path):
        if p.exists() and not args.force:
            raise CliError(f"output {p} already exists; pass --force to overwrite", EXIT_EXISTS)
    dump_json(nan_to_none(report), metrics_path)
    conf_path.write_text(confusion_csv(report))
    heads = report["heads"]
    log.info("%s top-1: %s", args.split, {k: round(v["top1"], 4) for k, v in heads.items()})
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .ablation import run_grid

    cfg = _config(args)
    bundle, sha = _dataset(args.dataset)
    out = Path(args.out)
    _fresh_dir(out, args.force)
    seeds = args.seeds or cfg.ablation.seeds
    try:
        table = run_grid(bundle, cfg.train, rows=cfg.ablation.rows, seeds=seeds,
                         jobs=args.jobs, out_dir=out / "cells")
    except TrainingDiverged as exc:
        raise CliError(str(exc), EXIT_DIVERGED) from None
    (out / "ablation.csv").write_text(table.to_csv())
    dump_json({"config": cfg.to_dict(), "dataset": str(args.dataset), "dataset_sha256": sha,
               "seeds": seeds, "tool_version": __version__,
               "artifacts": {"table": "ablation.csv", "cells": "cells"}},
              out / "manifest.json")
    for rec in table.summary():
        log.info("%-28s sar %.3f +- %.3f", rec["row"], rec["sar_mean"], rec["sar_std"])
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mdf", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"mdf {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=func)
        p.add_argument("--config", help="JSON run config (default: packaged default)")
        p.add_argument("--force", action="store_true", help="overwrite existing outputs")
        return p

    p = add("generate", cmd_generate, "write a synthetic paired dataset")
    p.add_argument("--out", required=True, help="dataset payload path (manifest goes to <out>.json)")

    p = add("train", cmd_train, "pretrain, transfer and train the twin model")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="run directory (must not exist)")

    p = add("eval", cmd_eval, "score a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", choices=("val", "test"), default="test")
    p.add_argument("--fuse", action="store_true", help="also report the fused output")
    p.add_argument("--out", required=True, help="directory for metrics JSON and confusion CSV")

    p = add("ablate", cmd_ablate, "run the ablation grid over several seeds")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", type=int, default=None, help="seeds per row (default: config)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _setup_logging()
        if getattr(args, "seeds", None) is not None and args.seeds < 1:
            raise CliError("--seeds must be >= 1", EXIT_USAGE)
        if getattr(args, "jobs", 1) < 1:
            raise CliError("--jobs must be >= 1", EXIT_USAGE)
        return args.func(args)
    except CliError as exc:
        print(f"mdf: error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, DataError) as exc:
        print(f"mdf: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (IntegrityError, FormatError, OSError, json.JSONDecodeError) as exc:
        print(f"mdf: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

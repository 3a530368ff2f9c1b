"""Run artifacts shared by the command line and the ablation grid: checkpoint,
history CSV, summary JSON, run manifest and evaluation reports."""
from __future__ import annotations

import io as _io
import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .data import DatasetBundle
from .fuse import FusionWeights
from .io import (CHECKPOINT_VERSION, DATASET_VERSION, dump_json, save_checkpoint)
from .model import EO, SAR, TwinModel
from .train import TrainConfig, TrainHistory, TrainingDiverged, evaluate, fit_split_fusion, train_mdf

log = logging.getLogger(__name__)

CHECKPOINT_FILE = "checkpoint.mdfc"
HISTORY_FILE = "history.csv"
SUMMARY_FILE = "summary.json"
MANIFEST_FILE = "manifest.json"
SPLITS = ("val", "test")


@dataclass
class RunManifest:
    config: dict
    dataset: str | None
    dataset_sha256: str | None
    seeds: dict
    artifacts: dict = field(default_factory=dict)
    tool_version: str = __version__
    checkpoint_format_version: int = CHECKPOINT_VERSION
    dataset_format_version: int = DATASET_VERSION

    def to_dict(self) -> dict:
        return asdict(self)


def fusion_dict(w: FusionWeights) -> dict:
    return {"w1": w.w1, "w2": w.w2, "residual": w.residual}


def write_history(history: TrainHistory, path) -> None:
    Path(path).write_text(history.to_csv())


def train_run(bundle: DatasetBundle, cfg: TrainConfig, out_dir, *, data_seed: int,
              dataset_path=None, dataset_sha256=None, run_config: dict | None = None):
    """Train, then write checkpoint, history, summary and manifest into ``out_dir``.

    On divergence the history recorded so far is still written before the
    error propagates. Returns ``(model, summary)``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        model, history = train_mdf(bundle, cfg)
    except TrainingDiverged as exc:
        if exc.history is not None:
            write_history(exc.history, out / HISTORY_FILE)
        dump_json({"status": "diverged", "epoch": exc.epoch, "error": str(exc),
                   "mode": cfg.mode}, out / SUMMARY_FILE)
        raise
    fusion = fit_split_fusion(model, bundle.val)
    val = evaluate(model, bundle.val, fusion)
    seeds = {"data": int(data_seed), "init": cfg.init_seed, "train": cfg.train_seed}
    save_checkpoint(model, out / CHECKPOINT_FILE, extra={"seeds": seeds, "mode": cfg.mode})
    write_history(history, out / HISTORY_FILE)
    summary = {
        "status": "ok",
        "mode": cfg.mode,
        "epochs": len(history),
        "fusion": fusion_dict(fusion),
        "val_top1": {name: m.top1 for name, m in val.items()},
        "seconds": float(sum(history.seconds)),
        "pretrain_losses": model.meta.get("pretrain_losses", []),
    }
    dump_json(summary, out / SUMMARY_FILE)
    manifest = RunManifest(
        config=run_config if run_config is not None else {"train": cfg.to_dict()},
        dataset=str(dataset_path) if dataset_path is not None else None,
        dataset_sha256=dataset_sha256, seeds=seeds,
        artifacts={"checkpoint": CHECKPOINT_FILE, "history": HISTORY_FILE,
                   "summary": SUMMARY_FILE})
    dump_json(manifest.to_dict(), out / MANIFEST_FILE)
    return model, summary


def eval_report(model: TwinModel, bundle: DatasetBundle, split: str = "test",
                fuse: bool = False) -> dict:
    """Metrics for both heads on ``split``; with ``fuse`` the fusion weights are
    fit on the validation split and applied to ``split``."""
    if split not in SPLITS:
        raise ValueError(f"split must be one of {SPLITS}, got {split!r}")
    if model.eo_encoder.input_dim != bundle.dim:
        raise ValueError(f"checkpoint expects {model.eo_encoder.input_dim}-wide inputs, "
                         f"dataset has {bundle.dim}")
    fusion = fit_split_fusion(model, bundle.val) if fuse else None
    metrics = evaluate(model, getattr(bundle, split), fusion)
    report = {"split": split, "n": len(getattr(bundle, split)),
              "heads": {name: m.to_dict() for name, m in metrics.items()}}
    if fusion is not None:
        report["fusion"] = fusion_dict(fusion)
    return report


def confusion_csv(report: dict) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    heads = report["heads"]
    k = len(next(iter(heads.values()))["confusion"])
    w.writerow(["head", "true_class", *(f"pred_{j}" for j in range(k))])
    for name in (EO, SAR, "fused"):
        if name in heads:
            for j, row in enumerate(heads[name]["confusion"]):
                w.writerow([name, j, *row])
    return buf.getvalue()


def nan_to_none(obj):
    """JSON has no NaN; per-class accuracy of an absent class becomes null."""
    if isinstance(obj, float) and np.isnan(obj):
        return None
    if isinstance(obj, dict):
        return {k: nan_to_none(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [nan_to_none(v) for v in obj]
    return obj


_SUMMARY_SCHEMA = {
    "type": "object",
    "required": ["status", "mode", "epochs", "fusion", "val_top1"],
    "properties": {
        "status": {"const": "ok"},
        "mode": {"enum": ["single", "supervised", "semi-supervised"]},
        "epochs": {"type": "integer", "minimum": 0},
        "fusion": {"type": "object", "required": ["w1", "w2", "residual"]},
        "val_top1": {"type": "object"},
    },
}
_MANIFEST_SCHEMA = {
    "type": "object",
    "required": ["config", "dataset_sha256", "seeds", "artifacts", "tool_version"],
    "properties": {
        "seeds": {"type": "object", "required": ["data", "init", "train"]},
        "artifacts": {"type": "object", "required": ["checkpoint", "history", "summary"]},
    },
}


def validate_run_dir(out_dir) -> dict:
    """Check every declared artifact of a training run exists and parses;
    raises ``ValueError`` otherwise. Returns the manifest."""
    import jsonschema

    from .io import load_checkpoint, sha256_file
    from .train import HISTORY_COLUMNS

    out = Path(out_dir)
    try:
        manifest = json.loads((out / MANIFEST_FILE).read_text())
        jsonschema.validate(manifest, _MANIFEST_SCHEMA)
        summary = json.loads((out / SUMMARY_FILE).read_text())
        jsonschema.validate(summary, _SUMMARY_SCHEMA)
    except (OSError, json.JSONDecodeError, jsonschema.ValidationError) as exc:
        raise ValueError(f"run directory {out} failed validation: {exc}") from None
    for name in manifest["artifacts"].values():
        if not (out / name).is_file():
            raise ValueError(f"declared artifact {name} missing from {out}")
    header = (out / HISTORY_FILE).read_text().splitlines()[0]
    if tuple(header.split(",")) != HISTORY_COLUMNS:
        raise ValueError(f"{out / HISTORY_FILE}: unexpected columns {header}")
    load_checkpoint(out / CHECKPOINT_FILE)
    if manifest["dataset"] and manifest["dataset_sha256"]:
        if sha256_file(manifest["dataset"]) != manifest["dataset_sha256"]:
            raise ValueError(f"dataset {manifest['dataset']} changed during the run")
    return manifest

"""The seven-row ablation grid, run over several seeds.

Rows, in order: a single SAR network from a fresh start on imbalanced data;
the same initialised from EO pretraining with the weighted sampler; plus
curation with augmentation; the twin trained supervised (sampler only, then
with curation); the twin trained semi-supervised; and a two-architecture
ensemble of semi-supervised SAR heads.
"""
from __future__ import annotations

import csv
import io
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import DatasetBundle
from .fuse import ensemble, fused_argmax
from .io import dump_json, save_checkpoint
from .model import ARCH_PRESETS, SAR, predict_proba
from .train import TrainConfig, evaluate, fit_split_fusion, train_mdf

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AblationRow:
    name: str
    description: str
    overrides: dict = field(default_factory=dict)
    presets: tuple = ()     # non-empty: ensemble of these architecture presets

    def configs(self, base: TrainConfig, seed_offset: int) -> list:
        cfg = replace(base, init_seed=base.init_seed + seed_offset,
                      train_seed=base.train_seed + seed_offset, **self.overrides)
        if not self.presets:
            return [cfg]
        return [replace(cfg, hidden=tuple(ARCH_PRESETS[p]["hidden"])) for p in self.presets]


_SUPERVISED = dict(lam=0.0, eta=0.0, use_unlabeled=False)

ROWS = (
    AblationRow("single_fresh", "single SAR net, fresh init, imbalanced",
                dict(twin=False, pretrain=False, use_sampler=False, use_curation=False)),
    AblationRow("single_pretrained_resampled", "single SAR net, EO-pretrained, 1/n sampler",
                dict(twin=False, use_curation=False)),
    AblationRow("single_pretrained_curated", "single SAR net, EO-pretrained, sampler + curation",
                dict(twin=False)),
    AblationRow("twin_supervised_resampled", "twin, supervised, sampler",
                dict(use_curation=False, **_SUPERVISED)),
    AblationRow("twin_supervised_curated", "twin, supervised, sampler + curation", _SUPERVISED),
    AblationRow("twin_semi_supervised", "twin, semi-supervised, sampler + curation"),
    AblationRow("ensemble_semi_supervised", "wide + deep semi-supervised SAR heads, fused",
                presets=("wide", "deep")),
)
ROW_NAMES = tuple(r.name for r in ROWS)
TABLE_COLUMNS = ("row", "description", "seeds", "sar_mean", "sar_std", "eo_mean", "eo_std",
                 "fused_mean", "fused_std")


def select_rows(names=None) -> tuple:
    if not names:
        return ROWS
    unknown = [n for n in names if n not in ROW_NAMES]
    if unknown:
        raise ValueError(f"unknown ablation rows {unknown}; choose from {list(ROW_NAMES)}")
    return tuple(r for r in ROWS if r.name in names)


@dataclass
class CellResult:
    row: str
    seed: int
    sar: float
    eo: float = float("nan")
    fused: float = float("nan")
    seconds: float = 0.0


def run_cell(bundle: DatasetBundle, base: TrainConfig, row: AblationRow, seed_offset: int,
             out_dir=None) -> CellResult:
    """Train every model of one (row, seed) cell and score it on the test split."""
    t0 = time.perf_counter()
    cell_dir = Path(out_dir) / row.name / f"seed{seed_offset}" if out_dir else None
    if cell_dir:
        cell_dir.mkdir(parents=True, exist_ok=True)
    models = []
    for i, cfg in enumerate(row.configs(base, seed_offset)):
        model, history = train_mdf(bundle, cfg)
        models.append((cfg, model))
        if cell_dir:
            tag = f"_{row.presets[i]}" if row.presets else ""
            save_checkpoint(model, cell_dir / f"checkpoint{tag}.mdfc")
            (cell_dir / f"history{tag}.csv").write_text(history.to_csv())
    if row.presets:
        val = [predict_proba(m, bundle.val.sar, SAR) for _, m in models]
        test = [predict_proba(m, bundle.test.sar, SAR) for _, m in models]
        weights, _ = ensemble(val, bundle.val.labels)
        pred = fused_argmax(weights.weights, np.stack(test))
        res = CellResult(row.name, seed_offset, float(np.mean(pred == bundle.test.labels)))
        extra = {"ensemble_weights": weights.weights.tolist(), "residual": weights.residual}
    else:
        cfg, model = models[0]
        if cfg.twin:
            m = evaluate(model, bundle.test, fit_split_fusion(model, bundle.val))
            res = CellResult(row.name, seed_offset, m[SAR].top1, m["eo"].top1, m["fused"].top1)
        else:
            m = evaluate(model, bundle.test)
            res = CellResult(row.name, seed_offset, m[SAR].top1)
        extra = {"mode": cfg.mode}
    res.seconds = time.perf_counter() - t0
    if cell_dir:
        dump_json({"row": row.name, "seed_offset": seed_offset, "test_top1": {
            "sar": res.sar, "eo": _json_float(res.eo), "fused": _json_float(res.fused)},
            "seconds": res.seconds, **extra}, cell_dir / "summary.json")
    log.info("cell %s seed %d: sar %.3f (%.1fs)", row.name, seed_offset, res.sar, res.seconds)
    return res


def _json_float(x):
    return None if np.isnan(x) else x


@dataclass
class AblationTable:
    rows: tuple
    cells: list

    def results(self, row: str, head: str = "sar") -> np.ndarray:
        return np.array([getattr(c, head) for c in self.cells if c.row == row])

    def summary(self) -> list:
        out = []
        for r in self.rows:
            rec = {"row": r.name, "description": r.description,
                   "seeds": len(self.results(r.name))}
            for head in ("sar", "eo", "fused"):
                v = self.results(r.name, head)
                ok = v[~np.isnan(v)]
                rec[f"{head}_mean"] = float(ok.mean()) if ok.size else float("nan")
                rec[f"{head}_std"] = float(ok.std(ddof=1)) if ok.size > 1 else (
                    0.0 if ok.size else float("nan"))
            out.append(rec)
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=TABLE_COLUMNS, lineterminator="\n")
        w.writeheader()
        for rec in self.summary():
            w.writerow({k: ("" if isinstance(v, float) and np.isnan(v) else
                            (f"{v:.6f}" if isinstance(v, float) else v)) for k, v in rec.items()})
        return buf.getvalue()


def run_grid(bundle: DatasetBundle, base: TrainConfig, rows=None, seeds: int = 5,
             jobs: int = 1, out_dir=None) -> AblationTable:
    """Every (row, seed) cell is independent; with ``jobs > 1`` they run in
    worker processes. Results come back in row-then-seed order either way."""
    if seeds < 1:
        raise ValueError("need at least one seed")
    rows = select_rows(rows) if not rows or isinstance(rows[0], str) else tuple(rows)
    tasks = [(r, s) for r in rows for s in range(seeds)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(run_cell, bundle, base, r, s, out_dir) for r, s in tasks]
            cells = [f.result() for f in futures]
    else:
        cells = [run_cell(bundle, base, r, s, out_dir) for r, s in tasks]
    return AblationTable(rows, cells)

"""Two-stage training: supervised EO pretraining, then joint twin training on the
composite objective."""
from __future__ import annotations

import itertools
import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import numcore as nc
from .data import DatasetBundle, LabeledSplit, batches, curate, epoch_length, evaluation_pool
from .fuse import FusionWeights, fit_fusion, fuse_predict
from .losses import FocalConfig, SwdConfig, cross_entropy, focal_loss, mdf_loss
from .model import (EO, SAR, ArchConfig, ClassifierParams, EncoderParams, TwinModel,
                    classify, encode, forward, init_encoder, init_head, init_twin, input_stats,
                    predict_proba,
                    transfer_encoder)

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    def __init__(self, message, history=None, epoch=None):
        super().__init__(message)
        self.history = history
        self.epoch = epoch


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 1.0
    eta: float = 1.0
    gamma: float = 2.0
    alpha: float = 1.0
    epochs: int = 100
    pretrain_epochs: int = 15
    batch_size: int = 64
    lr: float = 0.03
    lr_factor: float = 0.1
    lr_milestones: tuple = (0.5, 0.8)
    num_slices: int = 64
    swd_p: int = 2
    hidden: tuple = (128, 64)
    latent_dim: int = 32
    unit_norm: bool = True
    init_seed: int = 0
    train_seed: int = 0
    shared_head: bool = False
    twin: bool = True
    pretrain: bool = True
    use_curation: bool = True
    use_sampler: bool = True
    use_unlabeled: bool = True
    unlabeled_source: str = "pool"    # "pool": generated pool; "val_test": val+test inputs
    loss: str = "focal"
    head_target: int = 700
    tail_target: int = 550
    grad_clip: float | None = None

    def __post_init__(self):
        if self.epochs < 0 or self.pretrain_epochs < 0:
            raise ValueError("epoch counts must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lam < 0 or self.eta < 0:
            raise ValueError("lam and eta must be non-negative")
        if self.loss not in ("focal", "cross_entropy"):
            raise ValueError(f"loss must be 'focal' or 'cross_entropy', got {self.loss!r}")
        if self.unlabeled_source not in ("pool", "val_test"):
            raise ValueError(f"unlabeled_source must be 'pool' or 'val_test', "
                             f"got {self.unlabeled_source!r}")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ValueError("grad_clip must be positive or None")

    @property
    def mode(self) -> str:
        if not self.twin:
            return "single"
        if self.lam == 0 and self.eta == 0 and not self.use_unlabeled:
            return "supervised"
        return "semi-supervised"

    def schedule(self, total_epochs: int) -> nc.LrSchedule:
        return nc.LrSchedule(self.lr, self.lr_factor, tuple(self.lr_milestones), total_epochs)

    def arch(self, input_dim: int, n_classes: int) -> ArchConfig:
        return ArchConfig(input_dim, tuple(self.hidden), self.latent_dim, n_classes,
                          self.shared_head, self.unit_norm)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lr_milestones"] = list(self.lr_milestones)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        d = dict(d)
        for key in ("lr_milestones", "hidden"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


HISTORY_COLUMNS = ("epoch", "focal_eo", "focal_sar", "marginal_swd", "conditional_swd",
                   "total", "val_top1_eo", "val_top1_sar", "val_top1_fused", "lr")


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)
    seconds: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.records])

    def to_csv(self) -> str:
        lines = [",".join(HISTORY_COLUMNS)]
        for r in self.records:
            lines.append(",".join(str(r["epoch"]) if c == "epoch" else repr(float(r[c]))
                                  for c in HISTORY_COLUMNS))
        return "\n".join(lines) + "\n"


@dataclass
class Metrics:
    top1: float
    per_class: np.ndarray
    confusion: np.ndarray

    def to_dict(self) -> dict:
        return {"top1": self.top1, "per_class_accuracy": self.per_class.tolist(),
                "confusion": self.confusion.tolist()}


def metrics_from_predictions(pred, labels, k: int) -> Metrics:
    pred, labels = np.asarray(pred), np.asarray(labels)
    if labels.size == 0:
        raise ValueError("cannot evaluate an empty split")
    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (labels, pred), 1)
    support = confusion.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(support > 0, np.diag(confusion) / np.maximum(support, 1), np.nan)
    return Metrics(float(np.trace(confusion) / labels.size), per_class, confusion)


def split_probs(model: TwinModel, split: LabeledSplit) -> dict:
    return {EO: predict_proba(model, split.eo, EO), SAR: predict_proba(model, split.sar, SAR)}


def evaluate(model: TwinModel, split: LabeledSplit, fusion: FusionWeights | None = None) -> dict:
    """Top-1, per-class accuracy and confusion for each head, and for the fused
    output when ``fusion`` is given."""
    k = model.n_classes
    probs = split_probs(model, split)
    out = {d: metrics_from_predictions(np.argmax(p, axis=1), split.labels, k)
           for d, p in probs.items()}
    if fusion is not None:
        pred = fuse_predict(fusion, probs[EO], probs[SAR])
        out["fused"] = metrics_from_predictions(pred, split.labels, k)
    return out


def fit_split_fusion(model: TwinModel, split: LabeledSplit) -> FusionWeights:
    probs = split_probs(model, split)
    return fit_fusion(probs[EO], probs[SAR], split.labels)


def _sup_loss(cfg: TrainConfig):
    if cfg.loss == "cross_entropy":
        return cross_entropy
    focal = FocalConfig(cfg.gamma, cfg.alpha)
    return lambda logits, labels: focal_loss(logits, labels, focal)


def _clip(grads, max_norm):
    if max_norm is None:
        return grads
    norm = np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads))
    if norm <= max_norm:
        return grads
    return [(g * (max_norm / norm)).astype(g.dtype) for g in grads]


def pretrain(bundle: DatasetBundle, arch: ArchConfig, cfg: TrainConfig):
    """Supervised training of one encoder and head on the raw (uncurated,
    unresampled) EO training split. Returns ``(encoder, head, epoch_losses)``."""
    train = bundle.train
    if len(train) == 0:
        raise ValueError("pretraining needs labeled EO data")
    eo_mean, eo_std = input_stats(train.eo)
    eo_inputs = ((train.eo - np.float32(eo_mean)) / np.float32(eo_std)).astype(np.float32)
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence([cfg.init_seed, 101]).spawn(2)]
    enc, head = init_encoder(arch, rngs[0]), init_head(arch, rngs[1])
    params = enc.arrays() + head.arrays()
    n_enc = len(enc.arrays())
    if cfg.pretrain_epochs == 0:
        return enc, head, []
    loss_fn = _sup_loss(cfg)
    schedule = cfg.schedule(cfg.pretrain_epochs)
    order_rng = np.random.default_rng([cfg.train_seed, 103])
    state = nc.AdamState.zeros_like(params)
    losses = []

    def rebuild(arrays):
        it = iter(arrays[:n_enc])
        e = EncoderParams([type(l)(next(it), next(it)) for l in enc.layers], enc.unit_norm)
        return e, ClassifierParams(arrays[n_enc], arrays[n_enc + 1])

    for epoch in range(cfg.pretrain_epochs):
        lr = nc.lr_at(schedule, epoch)
        perm = order_rng.permutation(len(train))
        batch_losses = []
        for start in range(0, len(train), cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            x, y = eo_inputs[idx], train.labels[idx]

            def objective(*leaves):
                e, h = rebuild(leaves)
                return loss_fn(classify(h, encode(e, x).latents), y)

            try:
                loss, grads = nc.value_and_grad(objective, params)
            except nc.NonFiniteError as exc:
                raise TrainingDiverged(f"pretraining diverged at epoch {epoch}: {exc}",
                                       epoch=epoch) from exc
            params, state = nc.adam_step(params, _clip(grads, cfg.grad_clip), state, lr)
            batch_losses.append(float(loss))
        losses.append(float(np.mean(batch_losses)))
        log.debug("pretrain epoch %d loss %.4f", epoch, losses[-1])
    enc, head = rebuild(params)
    return enc, head, losses


def initial_model(bundle: DatasetBundle, cfg: TrainConfig) -> TwinModel:
    """Fresh twin with the pretrained EO encoder copied into the SAR branch."""
    arch = cfg.arch(bundle.dim, bundle.n_classes)
    twin = init_twin(arch, cfg.init_seed)
    twin.input_norm = {EO: input_stats(bundle.train.eo), SAR: input_stats(bundle.train.sar)}
    if cfg.pretrain:
        enc, _, losses = pretrain(bundle, arch, cfg)
        twin = transfer_encoder(enc, twin, SAR)
        twin.meta["pretrain_losses"] = losses
    return twin


def stage_two_bundle(bundle: DatasetBundle, cfg: TrainConfig) -> DatasetBundle:
    if cfg.unlabeled_source == "val_test":
        bundle = replace(bundle, unlabeled=evaluation_pool(bundle))
    if cfg.use_curation:
        return curate(bundle, cfg.head_target, cfg.tail_target, seed=cfg.train_seed)
    return bundle


def train_mdf(bundle: DatasetBundle, cfg: TrainConfig, twin: TwinModel | None = None):
    """Run the full protocol and return ``(model, history)``.

    Each step forwards a paired labeled batch through both branches (and the
    unlabeled batches when enabled), evaluates the composite objective and
    applies one Adam update to every parameter. With ``cfg.twin`` false only
    the SAR branch is trained, on its supervised term alone.
    """
    if twin is None:
        twin = initial_model(bundle, cfg)
    history = TrainHistory()
    if cfg.epochs == 0:
        return twin, history
    data = stage_two_bundle(bundle, cfg)
    use_unlabeled = cfg.use_unlabeled and cfg.twin
    stream = batches(data, cfg.batch_size, weighted=cfg.use_sampler,
                     seed=cfg.train_seed, use_unlabeled=use_unlabeled)
    steps = epoch_length(len(data.train), cfg.batch_size)
    schedule = cfg.schedule(cfg.epochs)
    focal_cfg = FocalConfig(cfg.gamma, cfg.alpha)
    sup = _sup_loss(cfg)
    params = twin.parameters()
    state = nc.AdamState.zeros_like(params)
    seed_seq = np.random.SeedSequence([cfg.train_seed, 107])
    swd_seeds = iter(seed_seq.generate_state(cfg.epochs * steps, dtype=np.uint64).tolist())

    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        lr = nc.lr_at(schedule, epoch)
        sums = dict.fromkeys(("focal_eo", "focal_sar", "marginal_swd", "conditional_swd", "total"), 0.0)
        for batch in itertools.islice(stream, steps):
            swd_cfg = SwdConfig(cfg.num_slices, cfg.swd_p, next(swd_seeds))
            lab = batch.labeled

            def objective(*leaves):
                m = twin.with_parameters(leaves)
                lat_sar, logit_sar = forward(m, lab.sar, SAR)
                if not cfg.twin:
                    f_sar = sup(logit_sar, lab.labels)
                    return f_sar, {"focal_eo": 0.0, "focal_sar": float(f_sar),
                                   "marginal_swd": 0.0, "conditional_swd": 0.0,
                                   "total": float(f_sar)}
                lat_eo, logit_eo = forward(m, lab.eo, EO)
                ue = us = None
                if use_unlabeled:
                    ue = forward(m, batch.unlabeled_eo, EO)[0]
                    us = forward(m, batch.unlabeled_sar, SAR)[0]
                br = mdf_loss(logit_eo, lab.labels, logit_sar, lab.labels,
                              lat_eo, lat_sar, ue, us, cfg.lam, cfg.eta,
                              focal_cfg, swd_cfg, cfg.loss)
                return br.total, br.as_dict()

            try:
                (_, terms), grads = nc.value_and_grad(objective, params, has_aux=True)
            except nc.NonFiniteError as exc:
                raise TrainingDiverged(f"training diverged at epoch {epoch}: {exc}",
                                       history=history, epoch=epoch) from exc
            params, state = nc.adam_step(params, _clip(grads, cfg.grad_clip), state, lr)
            for key in sums:
                sums[key] += terms[key]
        twin = twin.with_parameters(params)
        record = {"epoch": epoch, **{k: v / steps for k, v in sums.items()}, "lr": lr}
        record.update(_val_record(twin, bundle.val))
        history.records.append(record)
        history.seconds.append(time.perf_counter() - t0)
        log.info("epoch %d total %.4f val eo %.3f sar %.3f fused %.3f", epoch, record["total"],
                 record["val_top1_eo"], record["val_top1_sar"], record["val_top1_fused"])
    return twin, history


def _val_record(model: TwinModel, val: LabeledSplit) -> dict:
    fusion = fit_split_fusion(model, val)
    m = evaluate(model, val, fusion)
    return {"val_top1_eo": m[EO].top1, "val_top1_sar": m[SAR].top1,
            "val_top1_fused": m["fused"].top1}

"""Focal loss, sliced Wasserstein discrepancies and the composite MDF objective."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .numcore import Tensor


@dataclass(frozen=True)
class FocalConfig:
    gamma: float = 2.0
    alpha: float | tuple = 1.0

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError(f"gamma must be non-negative, got {self.gamma}")
        if np.any(np.asarray(self.alpha, dtype=float) <= 0):
            raise ValueError("alpha entries must be positive")


@dataclass(frozen=True)
class SwdConfig:
    num_slices: int = 64
    p: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.num_slices < 1:
            raise ValueError("num_slices must be >= 1")
        if self.p not in (1, 2):
            raise ValueError(f"p must be 1 or 2, got {self.p}")

    def with_seed(self, seed: int) -> "SwdConfig":
        return SwdConfig(self.num_slices, self.p, int(seed))


@dataclass(frozen=True)
class LossBreakdown:
    """The four objective terms and their weighted total.

    Fields hold scalar tensors so ``total`` can be differentiated directly;
    :meth:`as_dict` gives plain floats.
    """
    focal_eo: Tensor
    focal_sar: Tensor
    marginal_swd: Tensor
    conditional_swd: Tensor
    total: Tensor
    lam: float
    eta: float

    TERMS = ("focal_eo", "focal_sar", "marginal_swd", "conditional_swd", "total")

    def as_dict(self) -> dict:
        return {name: float(getattr(self, name)) for name in self.TERMS}


def _labels(labels, k: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.size == 0:
        raise ValueError("labels must be a non-empty 1-D array")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"label out of range [0, {k}): {labels.min()}..{labels.max()}")
    return labels.astype(np.int64)


def _logits(logits) -> Tensor:
    logits = _as_tensor(logits)
    if logits.ndim != 2 or logits.shape[0] == 0:
        raise ValueError("logits must be a non-empty [batch x k] array")
    if logits.shape[1] < 2:
        raise ValueError("need at least 2 classes")
    return logits


def focal_loss(logits, labels, cfg: FocalConfig = FocalConfig()) -> Tensor:
    """Mean of ``-alpha_y * (1 - p_y)**gamma * log p_y`` with ``p = softmax(logits)``."""
    logits = _logits(logits)
    labels = _labels(labels, logits.shape[1])
    logp_y = nc.pick(nc.log_softmax(logits), labels)
    p_y = nc.exp(logp_y)
    per_sample = nc.power(1.0 - p_y, cfg.gamma) * logp_y
    alpha = np.asarray(cfg.alpha, dtype=logits.dtype)
    if alpha.ndim:
        per_sample = per_sample * alpha[labels]
    else:
        per_sample = per_sample * float(alpha)
    return -nc.mean(per_sample)


def cross_entropy(logits, labels) -> Tensor:
    logits = _logits(logits)
    labels = _labels(labels, logits.shape[1])
    return -nc.mean(nc.pick(nc.log_softmax(logits), labels))


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    latents = getattr(x, "latents", x)
    if isinstance(latents, Tensor):
        return latents
    arr = np.asarray(latents)
    return Tensor(nc.as_array(arr, np.float64 if arr.dtype == np.float64 else nc.DEFAULT_DTYPE))


def _sorted_distance(sa: Tensor, sb: Tensor, p: int) -> Tensor:
    """Per-column p-Wasserstein between already sorted columns, shape [columns]."""
    diff = sa - sb
    if p == 1:
        return nc.mean(nc.abs_(diff), axis=0)
    return nc.sqrt(nc.mean(diff * diff, axis=0))


def wasserstein_1d(a, b, p: int = 2) -> Tensor:
    """Exact p-Wasserstein distance between two equal-size empirical 1-D samples."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 1 or b.ndim != 1:
        raise ValueError("wasserstein_1d expects 1-D samples")
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"unequal sample counts {a.shape[0]} vs {b.shape[0]}; equalize first")
    if a.shape[0] == 0:
        raise ValueError("empty sample")
    if p not in (1, 2):
        raise ValueError("p must be 1 or 2")
    col = lambda t: nc.sort(nc.reshape(t, (-1, 1)))
    return nc.sum_(_sorted_distance(col(a), col(b), p))


def projection_directions(dim: int, cfg: SwdConfig, dtype=np.float32) -> np.ndarray:
    """``num_slices`` uniform unit vectors (normalized Gaussian draws), shape [dim x slices]."""
    rng = np.random.default_rng(cfg.seed)
    dirs = rng.standard_normal((cfg.num_slices, dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return dirs.T.astype(dtype)


def swd(latents_a, latents_b, cfg: SwdConfig = SwdConfig()) -> Tensor:
    """Monte-Carlo sliced Wasserstein distance: mean over random unit directions
    of the 1-D p-Wasserstein distance between the projected point sets."""
    a, b = _as_tensor(latents_a), _as_tensor(latents_b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("latents must be [n x z]")
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("empty latent batch")
    if a.shape[1] == 0:
        raise ValueError("latent dimension must be >= 1")
    if a.shape != b.shape:
        raise ValueError(f"latent batches differ in shape: {a.shape} vs {b.shape}")
    dtype = np.result_type(a.dtype, b.dtype)
    dirs = projection_directions(a.shape[1], cfg, dtype)
    pa = nc.sort(nc.matmul(a, dirs), axis=0)
    pb = nc.sort(nc.matmul(b, dirs), axis=0)
    return nc.mean(_sorted_distance(pa, pb, cfg.p))


def _equalize(idx_a, idx_b, rng):
    n = min(len(idx_a), len(idx_b))
    if len(idx_a) > n:
        idx_a = np.sort(rng.choice(idx_a, size=n, replace=False))
    if len(idx_b) > n:
        idx_b = np.sort(rng.choice(idx_b, size=n, replace=False))
    return idx_a, idx_b


def class_conditional_swd(latents_a, labels_a, latents_b, labels_b,
                          cfg: SwdConfig = SwdConfig()) -> Tensor:
    """Sum over classes present in both batches of the per-class SWD.

    The larger group of each class is truncated to the smaller one by a seeded
    uniform subset. Classes seen in only one batch contribute nothing.
    """
    a, b = _as_tensor(latents_a), _as_tensor(latents_b)
    ya, yb = np.asarray(labels_a), np.asarray(labels_b)
    if len(ya) != a.shape[0] or len(yb) != b.shape[0]:
        raise ValueError("labels and latents differ in length")
    total = None
    for j in np.intersect1d(ya, yb):
        rng = np.random.default_rng([cfg.seed, 1, int(j)])
        ia, ib = _equalize(np.flatnonzero(ya == j), np.flatnonzero(yb == j), rng)
        term = swd(a[ia], b[ib], cfg)
        total = term if total is None else total + term
    if total is None:
        return Tensor(np.zeros((), dtype=np.result_type(a.dtype, b.dtype)))
    return total


def mdf_loss(eo_logits, eo_labels, sar_logits, sar_labels,
             labeled_lat_eo, labeled_lat_sar,
             unlabeled_lat_eo=None, unlabeled_lat_sar=None,
             lam: float = 1.0, eta: float = 1.0,
             focal_cfg: FocalConfig = FocalConfig(),
             swd_cfg: SwdConfig = SwdConfig(),
             supervised_loss: str = "focal") -> LossBreakdown:
    """Composite objective: a supervised term per domain on classifier outputs,
    ``lam`` times the SWD between unlabeled latents and ``eta`` times the
    class-conditional SWD between labeled latents.

    The discrepancy terms read latents only, so their gradient never reaches
    the classifier heads. A term whose weight is zero is still reported but is
    evaluated on detached latents so it adds nothing to the gradient. Missing
    unlabeled latents give a zero marginal term.
    """
    if lam < 0 or eta < 0:
        raise ValueError("lam and eta must be non-negative")
    if supervised_loss == "focal":
        sup = lambda z, y: focal_loss(z, y, focal_cfg)
    elif supervised_loss == "cross_entropy":
        sup = cross_entropy
    else:
        raise ValueError(f"unknown supervised loss {supervised_loss!r}")
    f_eo = sup(eo_logits, eo_labels)
    f_sar = sup(sar_logits, sar_labels)
    detach = lambda x, w: _as_tensor(x).detach() if w == 0 else x

    if unlabeled_lat_eo is None or unlabeled_lat_sar is None:
        marginal = Tensor(np.zeros((), dtype=f_eo.dtype))
    else:
        marginal = swd(detach(unlabeled_lat_eo, lam), detach(unlabeled_lat_sar, lam), swd_cfg)
    conditional = class_conditional_swd(detach(labeled_lat_eo, eta), eo_labels,
                                        detach(labeled_lat_sar, eta), sar_labels, swd_cfg)
    total = f_eo + f_sar + lam * marginal + eta * conditional
    return LossBreakdown(f_eo, f_sar, marginal, conditional, total, float(lam), float(eta))

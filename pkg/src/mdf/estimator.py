"""scikit-learn style estimators over the twin trainer and the least-squares fusion.

Paired inputs are passed as one matrix with the EO view in the left half of the
columns and the SAR view in the right half. Rows labeled ``-1`` are unlabeled
and feed only the alignment term.
"""
from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .data import ClassProfile, DatasetBundle, LabeledSplit, ShiftParams, UnlabeledPool
from .fuse import EnsembleWeights, FusionWeights, fit_fusion, fuse_scores, fused_argmax, _solve
from .model import EO, SAR, predict_proba
from .train import TrainConfig, train_mdf
from .validation import (UNLABELED, check_paired, check_partial_labels, check_probability_stack,
                         check_view)

HEADS = ("sar", "eo", "fused")


def _bundle(eo, sar, y, eo_val, sar_val, y_val, n_classes: int) -> DatasetBundle:
    lab = y != UNLABELED
    ids = np.arange(len(y), dtype=np.int64)
    train = LabeledSplit(eo[lab], sar[lab], y[lab], ids[lab])
    unlabeled = UnlabeledPool(eo[~lab], sar[~lab], ids[~lab])
    if eo_val is None:
        val = train
    else:
        val = LabeledSplit(eo_val, sar_val, y_val, np.arange(len(y_val), dtype=np.int64) + len(y))
    counts = np.bincount(y[lab], minlength=n_classes)
    profile = ClassProfile(tuple(counts / counts.sum()), int(counts.sum()),
                           tuple(str(j) for j in range(n_classes)))
    grid = math.isqrt(eo.shape[1])
    shift = ShiftParams(grid=grid if grid >= 2 else 2)
    return DatasetBundle(train, unlabeled, val, val, profile, shift, seed=0)


class MDFClassifier(ClassifierMixin, BaseEstimator):
    """Twin-encoder classifier trained with focal loss plus sliced-Wasserstein
    alignment of the two views' latents.

    ``head`` selects what :meth:`predict` reports: the SAR head (default), the
    EO head, or the least-squares fusion of both. Fusion weights are fit on
    ``X_val``/``y_val`` when given to :meth:`fit`, otherwise on the labeled
    training rows.
    """

    def __init__(self, lam=1.0, eta=1.0, gamma=2.0, epochs=30, pretrain_epochs=15,
                 batch_size=64, lr=0.001, hidden=(128, 64), latent_dim=32, num_slices=64,
                 use_curation=True, use_sampler=True, head_target=700, tail_target=550,
                 loss="focal", shared_head=False, head="sar", random_state=0):
        self.lam = lam
        self.eta = eta
        self.gamma = gamma
        self.epochs = epochs
        self.pretrain_epochs = pretrain_epochs
        self.batch_size = batch_size
        self.lr = lr
        self.hidden = hidden
        self.latent_dim = latent_dim
        self.num_slices = num_slices
        self.use_curation = use_curation
        self.use_sampler = use_sampler
        self.head_target = head_target
        self.tail_target = tail_target
        self.loss = loss
        self.shared_head = shared_head
        self.head = head
        self.random_state = random_state

    def _config(self, has_unlabeled: bool) -> TrainConfig:
        seed = int(self.random_state or 0)
        return TrainConfig(
            lam=self.lam, eta=self.eta, gamma=self.gamma,
            epochs=self.epochs, pretrain_epochs=self.pretrain_epochs,
            pretrain=self.pretrain_epochs > 0, batch_size=self.batch_size, lr=self.lr,
            hidden=tuple(self.hidden), latent_dim=self.latent_dim, num_slices=self.num_slices,
            use_curation=self.use_curation, use_sampler=self.use_sampler,
            use_unlabeled=has_unlabeled and self.lam > 0, head_target=self.head_target,
            tail_target=self.tail_target, loss=self.loss, shared_head=self.shared_head,
            init_seed=seed, train_seed=seed)

    def fit(self, X, y, X_val=None, y_val=None):
        if self.head not in HEADS:
            raise ValueError(f"head must be one of {HEADS}, got {self.head!r}")
        eo, sar = check_paired(X)
        y = check_partial_labels(y, len(eo))
        labeled = y != UNLABELED
        self.classes_ = np.unique(y[labeled])
        enc = np.full(len(y), UNLABELED, dtype=np.int64)
        enc[labeled] = np.searchsorted(self.classes_, y[labeled])
        if len(self.classes_) < 2:
            raise ValueError("need at least two distinct classes among labeled rows")
        if self.use_curation and math.isqrt(eo.shape[1]) ** 2 != eo.shape[1]:
            raise ValueError("curation augments square grids; each view must have a square "
                             "number of columns (or set use_curation=False)")
        eo_val = sar_val = yv = None
        if X_val is not None:
            eo_val, sar_val = check_paired(X_val, eo.shape[1])
            yv_raw = check_partial_labels(y_val, len(eo_val))
            unknown = np.setdiff1d(yv_raw, self.classes_)
            if unknown.size:
                raise ValueError(f"validation labels {unknown.tolist()} not seen in training")
            yv = np.searchsorted(self.classes_, yv_raw)
        bundle = _bundle(eo, sar, enc, eo_val, sar_val, yv, len(self.classes_))
        cfg = self._config(bool(np.any(~labeled)))
        self.model_, self.history_ = train_mdf(bundle, cfg)
        val = bundle.val
        self.fusion_ = fit_fusion(predict_proba(self.model_, val.eo, EO),
                                  predict_proba(self.model_, val.sar, SAR), val.labels)
        self.n_view_ = eo.shape[1]
        self.n_features_in_ = 2 * eo.shape[1]
        return self

    def _head_probs(self, X):
        check_is_fitted(self, "model_")
        eo, sar = check_view(X, self.n_view_)
        if self.head == "eo":
            if eo is None:
                raise ValueError("the EO head needs paired input")
            return predict_proba(self.model_, eo, EO)
        if self.head == "sar":
            return predict_proba(self.model_, sar, SAR)
        if eo is None:
            raise ValueError("fused prediction needs paired input")
        return fuse_scores(self.fusion_, predict_proba(self.model_, eo, EO),
                           predict_proba(self.model_, sar, SAR))

    def decision_function(self, X):
        """Per-class scores of the selected head (fused scores for ``head='fused'``)."""
        return self._head_probs(X)

    def predict_proba(self, X):
        if self.head == "fused":
            raise AttributeError("fused scores are not probabilities; use decision_function")
        return self._head_probs(X)

    def predict(self, X):
        check_is_fitted(self, "model_")
        return self.classes_[np.argmax(self._head_probs(X), axis=1)]


class LeastSquaresFusion(BaseEstimator):
    """Weights ``w`` minimising ``sum (sum_m w_m P_m - onehot(y))^2`` over the
    fitting set. ``fit`` takes ``m`` probability matrices ``[n x k]``."""

    def fit(self, probs, y):
        stack = check_probability_stack(probs)
        if stack.shape[0] < 1 or stack.shape[1] < 2:
            raise ValueError("need at least one model and two samples")
        y = np.asarray(y)
        w, res = _solve(stack, y)
        self.weights_ = w
        self.residual_ = res
        self.n_models_, _, self.n_classes_ = stack.shape
        return self

    def decision_function(self, probs):
        check_is_fitted(self, "weights_")
        stack = check_probability_stack(probs, self.n_classes_)
        if stack.shape[0] != self.n_models_:
            raise ValueError(f"fit on {self.n_models_} models, got {stack.shape[0]}")
        return np.tensordot(self.weights_, stack, axes=1)

    def predict(self, probs):
        check_is_fitted(self, "weights_")
        return fused_argmax(self.weights_, check_probability_stack(probs, self.n_classes_))

    def as_weights(self):
        check_is_fitted(self, "weights_")
        if self.n_models_ == 2:
            return FusionWeights(float(self.weights_[0]), float(self.weights_[1]), self.residual_)
        return EnsembleWeights(self.weights_.copy(), self.residual_)

"""Least-squares output fusion ``Y = w1 * y_eo + w2 * y_sar`` and its m-model form."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FusionWeights:
    w1: float
    w2: float
    residual: float

    @property
    def weights(self) -> np.ndarray:
        return np.array([self.w1, self.w2])


@dataclass(frozen=True)
class EnsembleWeights:
    weights: np.ndarray
    residual: float


def _stack(prob_list) -> np.ndarray:
    probs = np.asarray(prob_list, dtype=np.float64)
    if probs.ndim != 3:
        raise ValueError("expected m probability matrices of shape [n x k]")
    if probs.shape[1] == 0:
        raise ValueError("cannot fit fusion weights on zero samples")
    if not np.all(np.isfinite(probs)):
        raise ValueError("probabilities contain non-finite values")
    return probs


def _onehot(labels, n: int, k: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError("label out of range")
    y = np.zeros((n, k))
    y[np.arange(n), labels] = 1.0
    return y


def normal_equations(probs: np.ndarray, target: np.ndarray):
    """Gram matrix ``A_ij = <P_i, P_j>`` and right-hand side ``b_i = <P_i, Y>``."""
    flat = probs.reshape(len(probs), -1)
    return flat @ flat.T, flat @ target.reshape(-1)


def objective(weights, probs: np.ndarray, target: np.ndarray) -> float:
    fused = np.tensordot(np.asarray(weights, dtype=np.float64), probs, axes=1)
    return float(np.sum((fused - target) ** 2))


def _solve(probs, labels):
    m, n, k = probs.shape
    target = _onehot(labels, n, k)
    gram, rhs = normal_equations(probs, target)
    # pinv gives the minimum-norm solution when the Gram matrix is singular
    w = np.linalg.pinv(gram, hermitian=True) @ rhs
    return w, objective(w, probs, target)


def ensemble(prob_list, labels):
    """Least-squares weights for m models; returns ``(EnsembleWeights, predictions)``
    where predictions are on the fitting set."""
    probs = _stack(prob_list)
    if len(probs) < 2:
        raise ValueError("an ensemble needs at least two models")
    w, res = _solve(probs, labels)
    weights = EnsembleWeights(w, res)
    return weights, fused_argmax(w, probs)


def fit_fusion(probs_eo, probs_sar, labels) -> FusionWeights:
    """Fit ``(w1, w2)`` minimising the squared error between the weighted sum of
    the two probability matrices and the one-hot labels."""
    probs = _stack([probs_eo, probs_sar])
    if probs.shape[1] < 2:
        raise ValueError("need at least 2 samples to fit fusion weights")
    w, res = _solve(probs, labels)
    return FusionWeights(float(w[0]), float(w[1]), res)


def fused_argmax(weights, probs: np.ndarray) -> np.ndarray:
    scores = np.tensordot(np.asarray(weights, dtype=np.float64), probs, axes=1)
    return np.argmax(scores, axis=1)   # first maximum wins ties


def fuse_predict(w: FusionWeights, probs_eo, probs_sar) -> np.ndarray:
    probs_eo = np.asarray(probs_eo, dtype=np.float64)
    probs_sar = np.asarray(probs_sar, dtype=np.float64)
    if probs_eo.shape != probs_sar.shape or probs_eo.ndim != 2:
        raise ValueError(f"shape mismatch: {probs_eo.shape} vs {probs_sar.shape}")
    return fused_argmax(w.weights, np.stack([probs_eo, probs_sar]))


def fuse_scores(w: FusionWeights, probs_eo, probs_sar) -> np.ndarray:
    return w.w1 * np.asarray(probs_eo, dtype=np.float64) + w.w2 * np.asarray(probs_sar, dtype=np.float64)

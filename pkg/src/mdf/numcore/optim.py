"""Adam with bias correction and a piecewise-constant step-decay schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import NonFiniteError


@dataclass(frozen=True)
class AdamState:
    m: tuple = ()
    v: tuple = ()
    step: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls(tuple(np.zeros_like(p) for p in params),
                   tuple(np.zeros_like(p) for p in params), 0)


def adam_step(params, grads, state: AdamState | None, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One Adam update. Returns ``(new_params, new_state)``; inputs are not mutated."""
    if state is None or (state.step == 0 and not state.m):
        state = AdamState.zeros_like(params)
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ValueError("params, grads and optimizer state have different lengths")
    t = state.step + 1
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    new_p, new_m, new_v = [], [], []
    for i, (p, g, m, v) in enumerate(zip(params, grads, state.m, state.v)):
        g = np.asarray(g)
        if g.shape != p.shape or m.shape != p.shape:
            raise ValueError(f"shape mismatch for parameter {i}: param {p.shape}, grad {g.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter {i}")
        dt = p.dtype
        m = (beta1 * m + (1.0 - beta1) * g).astype(dt)
        v = (beta2 * v + (1.0 - beta2) * g * g).astype(dt)
        update = lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        new_p.append((p - update).astype(dt))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(tuple(new_m), tuple(new_v), t)


@dataclass(frozen=True)
class LrSchedule:
    """Step decay: ``initial * factor**k`` after the k-th milestone.

    Milestones are fractions of ``total_epochs`` so the same schedule shape
    carries over to shorter runs (0.5 and 0.8 of 100 epochs -> 50 and 80).
    """
    initial: float = 0.03
    factor: float = 0.1
    milestones: tuple = (0.5, 0.8)
    total_epochs: int = 100

    def __post_init__(self):
        if self.initial <= 0 or not 0 < self.factor <= 1:
            raise ValueError("need initial > 0 and 0 < factor <= 1")
        if any(not 0 <= m <= 1 for m in self.milestones):
            raise ValueError("milestones are fractions of total_epochs in [0, 1]")

    def boundaries(self) -> list[int]:
        return sorted(int(math.floor(m * self.total_epochs + 0.5)) for m in self.milestones)


def lr_at(schedule: LrSchedule, epoch: int) -> float:
    if epoch < 0 or (schedule.total_epochs > 0 and epoch >= schedule.total_epochs):
        raise ValueError(f"epoch {epoch} outside [0, {schedule.total_epochs})")
    crossed = sum(epoch >= b for b in schedule.boundaries())
    return schedule.initial * schedule.factor ** crossed

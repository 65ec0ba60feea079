"""AdamW with decoupled weight decay and a reduce-on-plateau learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import Tensor


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass
class AdamW:
    params: Sequence[Tensor]
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 1e-2
    masks: Sequence[np.ndarray | None] | None = None
    step_count: int = 0
    m: list[np.ndarray] = field(init=False)
    v: list[np.ndarray] = field(init=False)

    def __post_init__(self):
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        if self.masks is None:
            self.masks = [None] * len(self.params)

    def step(self, grads: Sequence[np.ndarray]) -> None:
        """One update. Raises before touching any parameter if a gradient is non-finite."""
        for g in grads:
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradient("non-finite gradient, step aborted")
        self.step_count += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for p, g, m, v, mask in zip(self.params, grads, self.m, self.v, self.masks):
            if mask is not None:
                g = np.where(mask, g, 0.0)
            p.data *= 1.0 - self.lr * self.weight_decay
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            if mask is not None:
                p.data[~mask] = 0.0


@dataclass
class ReduceOnPlateau:
    """Multiplies the learning rate by ``factor`` once ``patience`` epochs pass without
    a relative improvement larger than ``threshold``."""

    lr: float = 1e-3
    factor: float = 0.5
    patience: int = 10
    threshold: float = 1e-4
    min_lr: float = 1e-6
    best: float = math.inf
    bad_epochs: int = 0
    should_stop: bool = False

    def step(self, val_loss: float) -> float:
        if not math.isfinite(val_loss):
            raise ValueError("validation loss must be finite")
        if val_loss < self.best * (1.0 - self.threshold):
            self.best = val_loss
            self.bad_epochs = 0
            return self.lr
        self.bad_epochs += 1
        if self.bad_epochs > self.patience:
            if self.lr <= self.min_lr:
                self.should_stop = True
            self.lr = max(self.lr * self.factor, self.min_lr)
            self.bad_epochs = 0
        return self.lr

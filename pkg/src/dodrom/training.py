"""Epoch loop shared by every trainable model: mini-batches, AdamW, plateau
schedule on the validation loss, early stopping, best-state restore."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .autodiff import Tensor, value_and_grad
from .optim import AdamW, NonFiniteGradient, ReduceOnPlateau

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 1e-2
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    batch_size: int = 16
    max_epochs: int = 500
    patience: int = 10
    factor: float = 0.5
    threshold: float = 1e-4
    min_lr: float = 1e-6
    alpha: float = 0.9
    omega_h: float = 0.5
    init_seed: int = 1
    shuffle_seed: int = 2

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class History:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False

    @property
    def epochs(self) -> int:
        return len(self.train_loss)

    @property
    def best_val(self) -> float:
        return self.val_loss[self.best_epoch] if self.best_epoch >= 0 else math.nan


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, history: History):
        super().__init__(message)
        self.history = history


def split_indices(n: int, alpha: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Shuffle ``range(n)`` and split it into train/validation by fraction ``alpha``."""
    perm = rng.permutation(n)
    n_train = min(n - 1, max(1, int(round(alpha * n)))) if n > 1 else n
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def fit(params: Sequence[Tensor], masks: Sequence[np.ndarray], n_train: int,
        batch_loss: Callable[[np.ndarray], Tensor], val_loss: Callable[[], float],
        config: TrainConfig, rng: np.random.Generator | None = None) -> History:
    """Minimise ``batch_loss(indices)`` over shuffled mini-batches of ``range(n_train)``.

    The parameters are left at the state with the lowest validation loss.
    """
    rng = rng if rng is not None else np.random.default_rng(config.shuffle_seed)
    opt = AdamW(params, lr=config.lr, betas=config.betas, eps=config.eps,
                weight_decay=config.weight_decay, masks=masks)
    sched = ReduceOnPlateau(lr=config.lr, factor=config.factor, patience=config.patience,
                            threshold=config.threshold, min_lr=config.min_lr)
    hist = History()
    best_state = [p.data.copy() for p in params]
    best = math.inf
    bs = max(1, min(config.batch_size, n_train))

    for epoch in range(config.max_epochs):
        order = rng.permutation(n_train)
        total, count = 0.0, 0
        for start in range(0, n_train, bs):
            idx = order[start:start + bs]
            value, grads = value_and_grad(lambda: batch_loss(idx), params)
            if not math.isfinite(value):
                raise TrainingDiverged(f"non-finite training loss at epoch {epoch}", hist)
            try:
                opt.step(grads)
            except NonFiniteGradient as exc:
                raise TrainingDiverged(str(exc), hist) from exc
            total += value * len(idx)
            count += len(idx)
        v = float(val_loss())
        if not math.isfinite(v):
            raise TrainingDiverged(f"non-finite validation loss at epoch {epoch}", hist)
        hist.train_loss.append(total / count)
        hist.val_loss.append(v)
        hist.lr.append(opt.lr)
        if v < best:
            best = v
            hist.best_epoch = epoch
            best_state = [p.data.copy() for p in params]
        opt.lr = sched.step(v)
        if sched.should_stop:
            hist.stopped_early = True
            break
        if epoch % 50 == 0:
            log.debug("epoch %d train %.3e val %.3e lr %.1e", epoch, hist.train_loss[-1], v, opt.lr)

    for p, s in zip(params, best_state):
        p.data[...] = s
    return hist

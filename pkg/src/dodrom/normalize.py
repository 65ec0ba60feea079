"""Min-max feature scaling fitted on training data."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .store import read_csv, write_csv


@dataclass(eq=False)
class Normalizer:
    """``x -> (x - lo) / (hi - lo)`` per feature; constant features map to 0.

    Features are the last axis. A single-feature normaliser applied to a
    multi-column array acts globally (one min/max for every entry).
    """

    lo: np.ndarray
    hi: np.ndarray
    names: tuple[str, ...] = ()

    def __post_init__(self):
        self.lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        self.hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if np.any(self.hi < self.lo):
            raise ValueError("normalizer max below min")

    @classmethod
    def fit(cls, X: np.ndarray, names: Sequence[str] = ()) -> "Normalizer":
        X = np.asarray(X, dtype=float)
        return cls(X.min(axis=0), X.max(axis=0), tuple(names))

    @classmethod
    def fit_global(cls, X: np.ndarray, name: str = "u") -> "Normalizer":
        X = np.asarray(X, dtype=float)
        return cls(np.array([X.min()]), np.array([X.max()]), (name,))

    @classmethod
    def identity(cls, n: int = 1) -> "Normalizer":
        return cls(np.zeros(n), np.ones(n))

    @property
    def span(self) -> np.ndarray:
        d = self.hi - self.lo
        return np.where(d > 0, d, 1.0)

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.lo) / self.span

    def inverse(self, Z) -> np.ndarray:
        return np.asarray(Z, dtype=float) * self.span + self.lo

    def save(self, path: str | Path) -> None:
        names = self.names or tuple(f"f{i}" for i in range(len(self.lo)))
        write_csv(path, ["feature", "min", "max"], zip(names, self.lo, self.hi))

    @classmethod
    def load(cls, path: str | Path) -> "Normalizer":
        _, rows = read_csv(path)
        return cls(np.array([float(r[1]) for r in rows]), np.array([float(r[2]) for r in rows]),
                   tuple(r[0] for r in rows))

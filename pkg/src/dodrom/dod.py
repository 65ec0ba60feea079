"""Deep orthogonal decomposition: a network that maps ``(mu, t)`` to an
orthonormal basis of a small subspace of the pre-reduced coordinates.

A shared seed network ``s: (mu, t) -> R^latent`` feeds ``N'`` head networks
``R_i: R^latent -> R^{N_A}``. The head outputs are stacked as columns and
orthonormalised by modified Gram-Schmidt, giving ``V~(mu, t)`` of shape
``N_A x N'``. The full-order basis is ``A V~`` with ``A`` a fixed G-orthonormal
POD basis.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import IDENTITY, Mlp, load_mlp, save_mlp
from .normalize import Normalizer
from .reduction import pre_reduce
from .store import read_matrix, write_matrix
from .training import History, TrainConfig, fit, split_indices

log = logging.getLogger(__name__)

DEGENERATE_TOL = 1e-10
RESEED = "reseed"
RAISE = "raise"


class DegenerateBasisError(ArithmeticError):
    pass


class DegenerateBasisWarning(RuntimeWarning):
    pass


def _fallback_vector(Q_prev: list[np.ndarray], n: int) -> np.ndarray:
    """First canonical vector with a usable component orthogonal to ``Q_prev``."""
    best, best_norm = None, -1.0
    for m in range(n):
        v = np.zeros(n)
        v[m] = 1.0
        for q in Q_prev:
            v -= (q @ v) * q
        nv = np.linalg.norm(v)
        if nv > 0.5:
            return v
        if nv > best_norm:
            best, best_norm = v, nv
    return best


def gram_schmidt(W: Tensor, on_degenerate: str = RESEED, counter: list | None = None) -> Tensor:
    """Modified Gram-Schmidt on the columns of each ``W[b]`` (shape ``B x n x k``).

    Differentiable through the tape. A column whose residual norm drops below
    ``DEGENERATE_TOL`` is either replaced by an orthogonalised canonical vector
    (``"reseed"``, counted in ``counter`` and warned) or raises
    :class:`DegenerateBasisError` (``"raise"``).
    """
    if W.ndim != 3:
        raise ad.ShapeError("gram_schmidt", f"expected (batch, n, k), got {W.shape}")
    B, n, k = W.shape
    if k > n:
        raise ad.ShapeError("gram_schmidt", f"cannot orthonormalise {k} vectors in R^{n}")
    qs: list[Tensor] = []
    for j in range(k):
        v = ad.getitem(W, (slice(None), slice(None), j))
        for q in qs:
            v = v - ad.sum_(q * v, axis=1, keepdims=True) * q
        nrm = np.sqrt(np.sum(v.data ** 2, axis=1))
        bad = nrm < DEGENERATE_TOL
        if bad.any():
            if on_degenerate == RAISE:
                raise DegenerateBasisError(f"column {j} degenerate for {int(bad.sum())} batch entries")
            fb = np.zeros((B, n))
            for b in np.flatnonzero(bad):
                fb[b] = _fallback_vector([q.data[b] for q in qs], n)
            keep = (~bad).astype(float)[:, None]
            v = v * keep + fb
            if counter is not None:
                counter.append(int(bad.sum()))
            warnings.warn(f"Gram-Schmidt column {j} degenerate in {int(bad.sum())} case(s); reseeded",
                          DegenerateBasisWarning, stacklevel=2)
        v = v / ad.sqrt(ad.sum_(v * v, axis=1, keepdims=True))
        qs.append(v)
    return ad.stack(qs, axis=2)


def gram_schmidt_np(W: np.ndarray, on_degenerate: str = RESEED) -> np.ndarray:
    """Array-only twin of :func:`gram_schmidt` for inference."""
    W = np.asarray(W, dtype=float)
    squeeze = W.ndim == 2
    if squeeze:
        W = W[None]
    B, n, k = W.shape
    Q = np.empty_like(W)
    for j in range(k):
        v = W[:, :, j].copy()
        for i in range(j):
            q = Q[:, :, i]
            v -= np.sum(q * v, axis=1, keepdims=True) * q
        nrm = np.sqrt(np.sum(v * v, axis=1))
        bad = nrm < DEGENERATE_TOL
        if bad.any():
            if on_degenerate == RAISE:
                raise DegenerateBasisError(f"column {j} degenerate for {int(bad.sum())} batch entries")
            for b in np.flatnonzero(bad):
                v[b] = _fallback_vector([Q[b, :, i] for i in range(j)], n)
            warnings.warn(f"Gram-Schmidt column {j} degenerate in {int(bad.sum())} case(s); reseeded",
                          DegenerateBasisWarning, stacklevel=2)
            nrm = np.sqrt(np.sum(v * v, axis=1))
        Q[:, :, j] = v / nrm[:, None]
    return Q[0] if squeeze else Q


@dataclass(eq=False)
class DodModel:
    """Seed network, head networks, input scaling, and the outer basis ``A``."""

    seed: Mlp
    heads: list[Mlp]
    basis: np.ndarray
    input_norm: Normalizer
    frozen: bool = False
    on_degenerate: str = RESEED
    degenerate_events: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n_a = self.basis.shape[1]
        for h in self.heads:
            if h.n_in != self.seed.n_out or h.n_out != n_a:
                raise ValueError("head dims must be latent -> N_A")
        if len(self.heads) > n_a:
            raise ValueError("N' must not exceed N_A")

    @classmethod
    def build(cls, basis: np.ndarray, n_prime: int, rng: np.random.Generator, n_mu: int = 2,
              latent: int = 8, seed_hidden: Sequence[int] = (32, 32),
              head_hidden: Sequence[int] = (32,)) -> "DodModel":
        n_a = basis.shape[1]
        if not 0 < n_prime <= n_a:
            raise ValueError(f"need 0 < N' <= N_A, got N'={n_prime}, N_A={n_a}")
        seed = Mlp.build([n_mu + 1, *seed_hidden, latent], rng)
        heads = [Mlp.build([latent, *head_hidden, n_a], rng) for _ in range(n_prime)]
        return cls(seed, heads, np.asarray(basis, dtype=float), Normalizer.identity(n_mu + 1))

    @property
    def n_a(self) -> int:
        return self.basis.shape[1]

    @property
    def n_prime(self) -> int:
        return len(self.heads)

    @property
    def n_in(self) -> int:
        return self.seed.n_in

    def networks(self) -> list[Mlp]:
        return [self.seed, *self.heads]

    def params(self) -> list[Tensor]:
        return [p for net in self.networks() for p in net.params()]

    def masks(self) -> list[np.ndarray]:
        return [m for net in self.networks() for m in net.masks()]

    def inner(self, x: Tensor) -> Tensor:
        """Traced ``V~`` for already-scaled inputs ``x`` of shape ``B x (p+1)``."""
        z = self.seed(x)
        W = ad.stack([h(z) for h in self.heads], axis=2)
        return gram_schmidt(W, self.on_degenerate, self.degenerate_events)

    def _inputs(self, mu, t) -> np.ndarray:
        mu = np.atleast_2d(np.asarray(mu, dtype=float))
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if mu.shape[0] == 1 and t.size > 1:
            mu = np.repeat(mu, t.size, axis=0)
        if mu.shape[0] != t.size or mu.shape[1] + 1 != self.n_in:
            raise ad.ShapeError("dod", f"mu {mu.shape} and t {t.shape} do not match input width {self.n_in}")
        return np.column_stack([mu, t])

    def inner_batch(self, X: np.ndarray) -> np.ndarray:
        """``V~`` for raw input rows ``(mu, t)``; shape ``B x N_A x N'``."""
        z = self.seed.predict(self.input_norm.transform(X))
        return gram_schmidt_np(self._heads_np(z), self.on_degenerate)

    def _heads_np(self, z: np.ndarray) -> np.ndarray:
        shapes = {tuple(layer.weight.shape for layer in h.layers) for h in self.heads}
        if len(shapes) != 1:
            return np.stack([h.predict(z) for h in self.heads], axis=2)
        # all heads alike: evaluate them together as one batched stack
        y = z[None]
        for layers in zip(*(h.layers for h in self.heads)):
            W = np.stack([layer.weight.data for layer in layers])
            b = np.stack([layer.bias.data for layer in layers])[:, None, :]
            y = y @ W.transpose(0, 2, 1) + b
            slope = layers[0].slope
            if layers[0].activation != IDENTITY:
                y = np.maximum(y, slope * y) if 0.0 <= slope <= 1.0 else np.where(y >= 0.0, y, slope * y)
        return y.transpose(1, 2, 0)

    def inner_forward(self, mu, t) -> np.ndarray:
        """``V~(mu, t)``; a single point gives ``N_A x N'``, a time vector gives a batch."""
        V = self.inner_batch(self._inputs(mu, t))
        return V[0] if np.ndim(t) == 0 else V

    def full_basis(self, mu, t) -> np.ndarray:
        """``A V~(mu, t)``, G-orthonormal when ``A`` is."""
        V = self.inner_forward(mu, t)
        return self.basis @ V if V.ndim == 2 else np.einsum("ha,bak->bhk", self.basis, V)


def dod_inner_forward(model: DodModel, mu, t) -> np.ndarray:
    return model.inner_forward(mu, t)


def dod_full_basis(model: DodModel, mu, t) -> np.ndarray:
    return model.full_basis(mu, t)


def projection_loss(V: Tensor, S) -> Tensor:
    """Mean over slices and columns of ``||s - V V^T s||^2`` (``V`` batch ``B x N_A x N'``,
    ``S`` batch ``B x N_A x n_cols``)."""
    S = S if isinstance(S, Tensor) else Tensor(S)
    R = S - ad.matmul(V, ad.matmul(ad.transpose(V), S))
    return ad.sum_(R * R) / float(S.shape[0] * S.shape[2])


def _projection_loss_np(V: np.ndarray, S: np.ndarray) -> float:
    R = S - V @ (np.swapaxes(V, 1, 2) @ S)
    return float(np.sum(R * R) / (S.shape[0] * S.shape[2]))


def dod_loss(model: DodModel, mu, t, U_pre: np.ndarray) -> float:
    """Projection loss of a single ``(mu, t)`` slice of pre-reduced snapshots (``N_A x cols``)."""
    V = model.inner_forward(mu, t)
    return _projection_loss_np(V[None], np.asarray(U_pre)[None])


@dataclass(eq=False)
class SliceData:
    """Pre-reduced snapshot slices grouped by ``(mu_i, t_k)``."""

    X: np.ndarray        # (n_units, p+1) raw inputs
    S: np.ndarray        # (n_units, N_A, n_s2)
    mu_index: np.ndarray  # (n_units,)


def slice_data(snaps, A: np.ndarray) -> SliceData:
    """Group pre-reduced columns by ``(mu_i, t_k)``; every slice must hold the same
    number of ``nu`` samples."""
    U_pre = pre_reduce(snaps.U, A, snaps.mass)
    X, S, mi = [], [], []
    widths = set()
    for i in range(snaps.n_s1):
        for k in range(snaps.n_t):
            cols = snaps.slice_columns(i, k)
            if not cols:
                continue
            widths.add(len(cols))
            X.append([*snaps.mu[i], snaps.times[k]])
            S.append(U_pre[:, cols])
            mi.append(i)
    if len(widths) != 1:
        raise ValueError("slices have unequal nu counts; DOD training needs a product design")
    return SliceData(np.array(X), np.stack(S), np.array(mi))


def train_dod(model: DodModel, snaps, config: TrainConfig) -> History:
    """Fit the DOD on the slices of ``snaps``; validation holds out whole ``mu`` samples.

    Pre-reduced data are divided by one positive constant, which leaves the
    optimal subspaces unchanged. The model is frozen on return.
    """
    if model.frozen:
        raise RuntimeError("DOD model is frozen")
    data = slice_data(snaps, model.basis)
    rng = np.random.default_rng(config.shuffle_seed)
    mus = np.unique(data.mu_index)
    tr_mu, va_mu = split_indices(len(mus), config.alpha, rng)
    tr = np.flatnonzero(np.isin(data.mu_index, mus[tr_mu]))
    va = np.flatnonzero(np.isin(data.mu_index, mus[va_mu]))
    if va.size == 0:
        va = tr

    model.input_norm = Normalizer.fit(data.X[tr], ["mu1", "mu2", "t"][: data.X.shape[1]])
    scale = float(np.abs(data.S[tr]).max()) or 1.0
    X = model.input_norm.transform(data.X)
    S = data.S / scale
    Xtr, Str = X[tr], S[tr]
    Xva, Sva = data.X[va], S[va]

    def batch_loss(idx):
        return projection_loss(model.inner(Tensor(Xtr[idx])), Str[idx])

    def val_loss():
        return _projection_loss_np(model.inner_batch(Xva), Sva)

    hist = fit(model.params(), model.masks(), len(tr), batch_loss, val_loss, config, rng)
    model.frozen = True
    model.meta.update(init_seed=config.init_seed, shuffle_seed=config.shuffle_seed, epochs=hist.epochs,
                      final_train_loss=hist.train_loss[-1] if hist.train_loss else None,
                      best_val_loss=hist.best_val)
    log.info("DOD trained: %d epochs, best val %.3e", hist.epochs, hist.best_val)
    return hist


def save_dod(model: DodModel, directory: str | Path) -> Path:
    """Bundle: ``manifest.json``, ``seed.net``, ``head_<i>.net``, ``basis.bin``, ``inputs.csv``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_mlp(model.seed, d / "seed.net")
    for i, h in enumerate(model.heads):
        save_mlp(h, d / f"head_{i}.net")
    write_matrix(d / "basis.bin", model.basis)
    model.input_norm.save(d / "inputs.csv")
    manifest = {"kind": "dod", "n_a": model.n_a, "n_prime": model.n_prime,
                "latent": model.seed.n_out, "n_in": model.n_in, "frozen": model.frozen,
                "on_degenerate": model.on_degenerate, **model.meta}
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return d


def load_dod(directory: str | Path) -> DodModel:
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    if manifest.get("kind") != "dod":
        raise ValueError(f"{d} is not a DOD bundle")
    heads = [load_mlp(d / f"head_{i}.net") for i in range(manifest["n_prime"])]
    core = {"kind", "n_a", "n_prime", "latent", "n_in", "frozen", "on_degenerate"}
    return DodModel(load_mlp(d / "seed.net"), heads, read_matrix(d / "basis.bin"),
                    Normalizer.load(d / "inputs.csv"), manifest["frozen"],
                    manifest.get("on_degenerate", RESEED),
                    meta={k: v for k, v in manifest.items() if k not in core})

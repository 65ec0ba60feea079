"""Neural reduced-order models built on a linear or DOD basis.

Three variants share one container class:

* ``pod-dl-rom``: ``u ~ A_P D(F(mu, nu, t))`` with a static POD basis ``A_P``.
* ``dod-dfnn``: ``u ~ A V~(mu, t) F(mu, nu, t)`` with a frozen DOD.
* ``dod-dl-rom``: ``u ~ A V~(mu, t) D(F(mu, nu, t))``.

``F`` is the parameter-to-latent network, ``D`` the decoder. The encoder used
by the autoencoder variants is kept for training only. Inputs are scaled per
feature; reduced coefficients with one global min/max, both fitted on the
training split.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import Architecture, Dims
from .dod import DodModel, load_dod, save_dod
from .nn import Mlp, load_mlp, save_mlp
from .normalize import Normalizer
from .reduction import PodBasis, pod, pre_reduce
from .store import read_matrix, tuple_fingerprints, write_matrix
from .training import History, TrainConfig, fit, split_indices

log = logging.getLogger(__name__)

POD_DL_ROM = "pod-dl-rom"
DOD_DFNN = "dod-dfnn"
DOD_DL_ROM = "dod-dl-rom"
VARIANTS = (POD_DL_ROM, DOD_DFNN, DOD_DL_ROM)
FEATURES = ("mu1", "mu2", "nu1", "nu2", "t")


class SerialOrderError(RuntimeError):
    """A DOD-based ROM was requested before its DOD was trained and frozen."""


@dataclass(eq=False)
class Rom:
    variant: str
    dfnn: Mlp
    input_norm: Normalizer
    output_norm: Normalizer
    decoder: Mlp | None = None
    encoder: Mlp | None = None
    pod_basis: np.ndarray | None = None
    dod: DodModel | None = None
    omega_h: float = 0.5
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if (self.variant == POD_DL_ROM) != (self.pod_basis is not None):
            raise ValueError("pod-dl-rom needs a POD basis, DOD variants must not carry one")
        if self.variant != POD_DL_ROM and self.dod is None:
            raise ValueError(f"{self.variant} needs a DOD")
        if (self.variant == DOD_DFNN) != (self.decoder is None):
            raise ValueError("dod-dfnn has no decoder; the other variants need one")

    @property
    def reduced_dim(self) -> int:
        return self.pod_basis.shape[1] if self.dod is None else self.dod.n_prime

    @property
    def latent_dim(self) -> int:
        return self.dfnn.n_out

    def networks(self) -> list[Mlp]:
        """Networks evaluated at inference (encoder excluded)."""
        nets = [self.dfnn] + ([self.decoder] if self.decoder is not None else [])
        return nets + (self.dod.networks() if self.dod is not None else [])

    def trainable(self) -> list[Mlp]:
        return [n for n in (self.dfnn, self.decoder, self.encoder) if n is not None]

    def params(self) -> list[Tensor]:
        return [p for n in self.trainable() for p in n.params()]

    def masks(self) -> list[np.ndarray]:
        return [m for n in self.trainable() for m in n.masks()]

    def coefficients(self, X: np.ndarray) -> np.ndarray:
        """Reduced coefficients (``B x reduced_dim``) for raw feature rows."""
        z = self.dfnn.predict(self.input_norm.transform(X))
        if self.decoder is not None:
            z = self.decoder.predict(z)
        return self.output_norm.inverse(z)

    def predict_batch(self, X: np.ndarray) -> np.ndarray:
        """Full-order predictions, one column per feature row ``(mu, nu, t)``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        c = self.coefficients(X)
        if self.dod is None:
            return self.pod_basis @ c.T
        p = self.dod.n_in - 1
        V = self.dod.inner_batch(np.column_stack([X[:, :p], X[:, -1]]))
        return self.dod.basis @ np.einsum("bak,bk->ab", V, c)

    def predict_trajectory(self, mu, nu, times) -> np.ndarray:
        times = np.asarray(times, dtype=float)
        X = np.column_stack([np.tile(np.r_[mu, nu], (times.size, 1)), times])
        return self.predict_batch(X)


def infer(model: Rom, mu, nu, t: float) -> np.ndarray:
    """``u_h(mu, nu, t)`` approximation, shape ``N_h``."""
    return model.predict_batch(np.r_[mu, nu, t][None])[:, 0]


def loss_terms(model: Rom, x: Tensor, y: Tensor) -> tuple[Tensor, Tensor]:
    """``(L_rec, L_lat)`` with ``L_rec = mean ||y - D(F(x))||^2 / 2`` and
    ``L_lat = mean ||E(y) - F(x)||^2 / 2``; the DFNN-only variant returns
    ``(mean ||y - F(x)||^2, 0)``."""
    z = model.dfnn(x)
    B = float(x.shape[0])
    if model.decoder is None:
        r = y - z
        return ad.sum_(r * r) / B, Tensor(0.0)
    r = y - model.decoder(z)
    e = model.encoder(y) - z
    return ad.sum_(r * r) / (2.0 * B), ad.sum_(e * e) / (2.0 * B)


def rom_loss(model: Rom, x: Tensor, y: Tensor) -> Tensor:
    rec, lat = loss_terms(model, x, y)
    if model.decoder is None:
        return rec
    w = model.omega_h
    return w * rec + (1.0 - w) * lat


def _loss_np(model: Rom, X: np.ndarray, Y: np.ndarray) -> float:
    z = model.dfnn.predict(X)
    if model.decoder is None:
        return float(np.sum((Y - z) ** 2) / len(X))
    rec = np.sum((Y - model.decoder.predict(z)) ** 2) / (2 * len(X))
    lat = np.sum((model.encoder.predict(Y) - z) ** 2) / (2 * len(X))
    return float(model.omega_h * rec + (1 - model.omega_h) * lat)


def reduced_targets(snaps, pod_basis: np.ndarray | None = None, dod: DodModel | None = None) -> np.ndarray:
    """Reduced coordinates of every snapshot column: ``A_P^T G u`` or ``V~^T A^T G u``."""
    if dod is None:
        return pre_reduce(snaps.U, pod_basis, snaps.mass).T
    params = snaps.column_params()
    p = dod.n_in - 1
    V = dod.inner_batch(np.column_stack([params[:, :p], params[:, -1]]))
    U_pre = pre_reduce(snaps.U, dod.basis, snaps.mass)
    return np.einsum("bak,ab->bk", V, U_pre)


def fit_rom(model: Rom, X: np.ndarray, Y: np.ndarray, groups: np.ndarray, config: TrainConfig,
            fit_normalizers: bool = True) -> History:
    """Train ``model`` on raw features ``X`` and reduced targets ``Y``.

    ``groups`` labels each row with its trajectory; the validation split holds
    out whole trajectories and batches are drawn in units of trajectories.
    With ``fit_normalizers=False`` the model's current normalisers are used as is.
    """
    rng = np.random.default_rng(config.shuffle_seed)
    ids = np.unique(groups)
    tr_g, va_g = split_indices(len(ids), config.alpha, rng)
    rows_of = [np.flatnonzero(groups == g) for g in ids]
    tr_rows = np.concatenate([rows_of[g] for g in tr_g])
    va_rows = np.concatenate([rows_of[g] for g in va_g]) if len(va_g) else tr_rows
    if fit_normalizers:
        model.input_norm = Normalizer.fit(X[tr_rows], FEATURES[: X.shape[1]] if X.shape[1] == 5 else ())
        model.output_norm = Normalizer.fit_global(Y[tr_rows])
    Xn, Yn = model.input_norm.transform(X), model.output_norm.transform(Y)
    Xva, Yva = Xn[va_rows], Yn[va_rows]
    tr_sets = [rows_of[g] for g in tr_g]

    def batch_loss(idx):
        rows = np.concatenate([tr_sets[i] for i in idx])
        return rom_loss(model, Tensor(Xn[rows]), Tensor(Yn[rows]))

    hist = fit(model.params(), model.masks(), len(tr_sets), batch_loss,
               lambda: _loss_np(model, Xva, Yva), config, rng)
    model.meta.update(init_seed=config.init_seed, shuffle_seed=config.shuffle_seed,
                      train_groups=[int(ids[g]) for g in tr_g], val_groups=[int(ids[g]) for g in va_g],
                      final_train_loss=hist.train_loss[-1] if hist.train_loss else None,
                      best_val_loss=hist.best_val, epochs=hist.epochs)
    return hist


def _groups(snaps) -> np.ndarray:
    return np.repeat(np.arange(snaps.n_traj), snaps.n_t)


def _dfnn_in(snaps) -> int:
    return snaps.mu.shape[1] + snaps.nu.shape[1] + 1


def build_rom(variant: str, n_in: int, dims: Dims, arch: Architecture, rng: np.random.Generator,
              pod_basis: np.ndarray | None = None, dod: DodModel | None = None,
              omega_h: float = 0.5) -> Rom:
    reduced = pod_basis.shape[1] if variant == POD_DL_ROM else dod.n_prime
    if variant == DOD_DFNN:
        dfnn = Mlp.build([n_in, *arch.dfnn_hidden, reduced], rng)
        decoder = encoder = None
    else:
        if dims.n > reduced:
            raise ValueError(f"latent n={dims.n} exceeds reduced dimension {reduced}")
        dfnn = Mlp.build([n_in, *arch.dfnn_hidden, dims.n], rng)
        decoder = Mlp.build([dims.n, *arch.decoder_hidden, reduced], rng)
        encoder = Mlp.build([reduced, *arch.decoder_hidden[::-1], dims.n], rng)
    return Rom(variant, dfnn, Normalizer.identity(n_in), Normalizer.identity(1), decoder, encoder,
               pod_basis, dod, omega_h)


def _require_frozen(dod: DodModel | None) -> None:
    if dod is None or not dod.frozen:
        raise SerialOrderError("DOD-based ROMs need a trained, frozen DOD; run DOD training first")


def train_pod_dl_rom(snaps, dims: Dims, config: TrainConfig, arch: Architecture | None = None,
                     basis: PodBasis | np.ndarray | None = None) -> tuple[Rom, History]:
    """POD-DL-ROM; the POD basis of size ``N`` is computed from ``snaps`` unless given."""
    arch = arch or Architecture()
    if basis is None:
        basis = pod(snaps.U, snaps.mass, dims.N)
    A = basis.modes if isinstance(basis, PodBasis) else np.asarray(basis)
    A = A[:, : dims.N]
    rng = np.random.default_rng(config.init_seed)
    model = build_rom(POD_DL_ROM, _dfnn_in(snaps), dims, arch, rng, pod_basis=A, omega_h=config.omega_h)
    hist = fit_rom(model, snaps.column_params(), reduced_targets(snaps, pod_basis=A), _groups(snaps), config)
    model.meta["train_tuples"] = tuple_fingerprints(snaps)
    return model, hist


def train_dod_dfnn(snaps, dod: DodModel, dims: Dims, config: TrainConfig,
                   arch: Architecture | None = None) -> tuple[Rom, History]:
    _require_frozen(dod)
    rng = np.random.default_rng(config.init_seed)
    model = build_rom(DOD_DFNN, _dfnn_in(snaps), dims, arch or Architecture(), rng, dod=dod)
    hist = fit_rom(model, snaps.column_params(), reduced_targets(snaps, dod=dod), _groups(snaps), config)
    model.meta["train_tuples"] = tuple_fingerprints(snaps)
    return model, hist


def train_dod_dl_rom(snaps, dod: DodModel, dims: Dims, config: TrainConfig,
                     arch: Architecture | None = None) -> tuple[Rom, History]:
    """Autoencoder ROM on the DOD coefficients ``V~^T A^T G u``, computed once since the
    DOD is frozen."""
    _require_frozen(dod)
    rng = np.random.default_rng(config.init_seed)
    model = build_rom(DOD_DL_ROM, _dfnn_in(snaps), dims, arch or Architecture(), rng, dod=dod,
                      omega_h=config.omega_h)
    hist = fit_rom(model, snaps.column_params(), reduced_targets(snaps, dod=dod), _groups(snaps), config)
    model.meta["train_tuples"] = tuple_fingerprints(snaps)
    return model, hist


def save_rom(model: Rom, directory: str | Path) -> Path:
    """Bundle directory: ``manifest.json``, ``*.net`` checkpoints, ``inputs.csv``,
    ``outputs.csv``, plus ``basis.bin`` (POD) or a ``dod/`` sub-bundle."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_mlp(model.dfnn, d / "dfnn.net")
    if model.decoder is not None:
        save_mlp(model.decoder, d / "decoder.net")
        save_mlp(model.encoder, d / "encoder.net")
    if model.pod_basis is not None:
        write_matrix(d / "basis.bin", model.pod_basis)
    if model.dod is not None:
        save_dod(model.dod, d / "dod")
    model.input_norm.save(d / "inputs.csv")
    model.output_norm.save(d / "outputs.csv")
    manifest = {
        "variant": model.variant,
        "dims": {"n": model.latent_dim if model.decoder is not None else None,
                 "reduced": model.reduced_dim,
                 "n_a": model.dod.n_a if model.dod is not None else None,
                 "n_h": int((model.pod_basis if model.dod is None else model.dod.basis).shape[0])},
        "omega_h": model.omega_h,
        **{k: v for k, v in model.meta.items() if k not in ("variant", "dims", "omega_h")},
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return d


def load_rom(directory: str | Path) -> Rom:
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    variant = manifest.get("variant")
    if variant not in VARIANTS:
        raise ValueError(f"{d} is not a ROM bundle")
    dec = enc = None
    if variant != DOD_DFNN:
        dec, enc = load_mlp(d / "decoder.net"), load_mlp(d / "encoder.net")
    basis = read_matrix(d / "basis.bin") if variant == POD_DL_ROM else None
    dod = load_dod(d / "dod") if variant != POD_DL_ROM else None
    meta = {k: v for k, v in manifest.items() if k not in ("variant", "dims", "omega_h")}
    return Rom(variant, load_mlp(d / "dfnn.net"), Normalizer.load(d / "inputs.csv"),
               Normalizer.load(d / "outputs.csv"), dec, enc, basis, dod, manifest["omega_h"], meta)

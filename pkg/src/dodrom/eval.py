"""Accuracy and cost metrics: trajectory-normalised relative error, forward
timings against the full-order solver, and the weights-versus-error sweep."""

from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import fom
from .config import Architecture, Dims
from .dod import DodModel, train_dod
from .nn import count_active_weights
from .reduction import g_norm_sq, pod
from .roms import (DOD_DFNN, DOD_DL_ROM, POD_DL_ROM, VARIANTS, Rom, train_dod_dfnn, train_dod_dl_rom,
                   train_pod_dl_rom)
from .store import tuple_fingerprints, write_csv
from .training import TrainConfig

log = logging.getLogger(__name__)

EVAL_SCHEMA = "schema=dodrom-eval/1"
SWEEP_SCHEMA = "schema=dodrom-sweep/1"


class DataOverlapError(ValueError):
    """Test tuples coincide with tuples the model was trained on."""


class ZeroNormWarning(RuntimeWarning):
    pass


def trajectory_errors(U: np.ndarray, U_hat: np.ndarray, G: np.ndarray, n_t: int
                      ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-trajectory ``(relative error, error energy, reference energy)``.

    Columns are grouped in consecutive blocks of ``n_t``. The relative error is
    ``sqrt(sum_k ||u - u^||_G^2 / n_t) / sqrt(sum_k ||u||_G^2 / n_t)``; trajectories
    with zero reference energy get ``nan``.
    """
    n_traj = U.shape[1] // n_t
    num = g_norm_sq(G, U - U_hat).reshape(n_traj, n_t).sum(axis=1)
    den = g_norm_sq(G, U).reshape(n_traj, n_t).sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(den > 0, np.sqrt(num / n_t) / np.sqrt(den / n_t), np.nan)
    return rel, num, den


@dataclass
class EvalReport:
    variant: str
    params: np.ndarray                # (n_test, p+q)
    per_tuple: np.ndarray             # nan for excluded tuples
    excluded: list[int]
    E_R: float
    E_R_integral: float
    t_fwd_ms: float = math.nan
    t_fom_ms: float = math.nan
    active_weights: int = 0

    @property
    def speedup(self) -> float:
        return speedup(self.t_fom_ms, self.t_fwd_ms) if self.t_fwd_ms > 0 else math.nan

    def write_csv(self, path: str | Path) -> None:
        rows = [("tuple", i, *p, e) for i, (p, e) in enumerate(zip(self.params, self.per_tuple))]
        blank = [""] * self.params.shape[1]
        for key, val in [("E_R", self.E_R), ("E_R_integral", self.E_R_integral),
                         ("t_fwd_ms", self.t_fwd_ms), ("t_fom_ms", self.t_fom_ms),
                         ("speedup", self.speedup), ("active_weights", self.active_weights)]:
            rows.append((key, "", *blank, val))
        names = ["mu1", "mu2", "nu1", "nu2"] if self.params.shape[1] == 4 else \
            [f"p{k}" for k in range(self.params.shape[1])]
        write_csv(path, ["kind", "index", *names, "value"], rows,
                  comment=f"{EVAL_SCHEMA} variant={self.variant}")


def check_disjoint(model: Rom, test) -> None:
    seen = set(model.meta.get("train_tuples", ()))
    clash = [p for p, f in enumerate(tuple_fingerprints(test)) if f in seen]
    if clash:
        raise DataOverlapError(f"{len(clash)} test tuple(s) appear in the training data, e.g. #{clash[0]}")


def relative_error(model: Rom, test, check: bool = True) -> EvalReport:
    """Mean trajectory-normalised relative G-error over the tuples of ``test``.

    Zero-norm trajectories are excluded with a warning. ``E_R_integral`` is the
    alternative pooled form ``sqrt(sum num / sum den)`` for diagnostics.
    """
    if check:
        check_disjoint(model, test)
    U_hat = np.concatenate([model.predict_trajectory(test.mu[i], test.nu[j], test.times)
                            for i, j in test.pairs], axis=1)
    rel, num, den = trajectory_errors(test.U, U_hat, test.mass, test.n_t)
    excluded = [int(p) for p in np.flatnonzero(~np.isfinite(rel))]
    if excluded:
        warnings.warn(f"{len(excluded)} zero-norm test trajectories excluded", ZeroNormWarning, stacklevel=2)
    keep = np.isfinite(rel)
    E = float(rel[keep].mean()) if keep.any() else math.nan
    E_int = float(np.sqrt(num[keep].sum() / den[keep].sum())) if keep.any() else math.nan
    params = np.array([np.r_[test.mu[i], test.nu[j]] for i, j in test.pairs])
    return EvalReport(model.variant, params, rel, excluded, E, E_int,
                      active_weights=count_active_weights(model))


def speedup(t_fom: float, t_fwd: float) -> float:
    if t_fom <= 0 or t_fwd <= 0:
        raise ValueError("timings must be positive")
    return t_fom / t_fwd


def median_time(fn: Callable[[], object], reps: int = 20, warmup: int = 2) -> float:
    """Median wall time of ``fn()`` in seconds over ``reps`` runs after ``warmup`` calls."""
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(max(1, reps)):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return float(np.median(samples))


def forward_time(model: Rom, mu, nu, times, reps: int = 20) -> float:
    """Median seconds for one full-trajectory ROM evaluation."""
    return median_time(lambda: model.predict_trajectory(mu, nu, times), reps)


def fom_time(config, mu, nu, reps: int = 20, warmup: int = 1) -> float:
    """Median seconds of a Darcy plus transport solve for the tuple ``(mu, nu)``."""
    grid = config.grid
    geom, phys = fom.GeomParams(*mu), fom.PhysParams(*nu)

    def run():
        flow = fom.solve_darcy(grid, geom, config.mu1_range, config.mu2_range)
        fom.solve_transport(grid, flow, geom, phys, config.T, config.n_t)

    return median_time(run, reps, warmup)


def add_timings(report: EvalReport, model: Rom, test, reps: int = 20,
                t_fom: float | None = None) -> EvalReport:
    """Fill forward and FOM timings (ms) using the first test tuple."""
    i, j = test.pairs[0]
    report.t_fwd_ms = 1e3 * forward_time(model, test.mu[i], test.nu[j], test.times, reps)
    if t_fom is None:
        t_fom = fom_time(test.config, test.mu[i], test.nu[j], reps)
    report.t_fom_ms = 1e3 * t_fom
    return report


@dataclass
class SweepTable:
    rows: list[dict] = field(default_factory=list)
    failures: list[dict] = field(default_factory=list)
    models: dict = field(default_factory=dict)   # (variant, preset) -> Rom, when kept

    COLUMNS = ("variant", "preset", "active_weights", "E_R", "weight_ratio", "t_fwd_ms", "time_ratio",
               "t_fom_ms", "speedup")

    def cell(self, variant: str, preset: str) -> dict | None:
        for r in self.rows:
            if r["variant"] == variant and r["preset"] == preset:
                return r
        return None

    def write_csv(self, path: str | Path) -> None:
        rows = [[r[c] for c in self.COLUMNS] + ["ok", ""] for r in self.rows]
        rows += [[f["variant"], f["preset"]] + [""] * (len(self.COLUMNS) - 2) + ["failed", f["error"]]
                 for f in self.failures]
        write_csv(path, [*self.COLUMNS, "status", "error"], rows, comment=SWEEP_SCHEMA)


def weight_error_sweep(train, test, dims: Dims, presets: Mapping[str, Architecture] | Sequence[Architecture],
                       rom_config: TrainConfig, dod_config: TrainConfig | None = None,
                       variants: Sequence[str] = VARIANTS, timing: bool = True, timing_reps: int = 20,
                       t_fom: float | None = None, keep_models: bool = False) -> SweepTable:
    """Train every (variant, preset) cell with fixed seeds and tabulate active
    weights, E_R and forward time; failures are recorded and the sweep goes on.

    ``weight_ratio`` and ``time_ratio`` are relative to the POD-DL-ROM cell of the
    same preset when it exists. With ``timing=False`` the timing columns are nan.
    ``keep_models`` retains the trained models in ``table.models``.
    """
    archs = list(presets.values()) if isinstance(presets, Mapping) else list(presets)
    dod_config = dod_config or rom_config
    table = SweepTable()
    A = pod(train.U, train.mass, dims.n_a).modes if any(v != POD_DL_ROM for v in variants) else None
    pod_basis = pod(train.U, train.mass, dims.N) if POD_DL_ROM in variants else None
    if timing and t_fom is None:
        i, j = test.pairs[0]
        t_fom = fom_time(test.config, test.mu[i], test.nu[j], timing_reps)

    for arch in archs:
        dod: DodModel | None = None
        dod_error = None
        if any(v != POD_DL_ROM for v in variants):
            try:
                dod = DodModel.build(A, dims.n_prime, np.random.default_rng(dod_config.init_seed),
                                     n_mu=train.mu.shape[1], latent=arch.dod_latent,
                                     seed_hidden=arch.dod_seed_hidden, head_hidden=arch.dod_head_hidden)
                train_dod(dod, train, dod_config)
            except Exception as exc:  # recorded, sweep continues
                dod_error = f"DOD training failed: {exc}"
        for variant in variants:
            try:
                if variant == POD_DL_ROM:
                    model, _ = train_pod_dl_rom(train, dims, rom_config, arch, pod_basis)
                elif dod_error:
                    raise RuntimeError(dod_error)
                elif variant == DOD_DFNN:
                    model, _ = train_dod_dfnn(train, dod, dims, rom_config, arch)
                else:
                    model, _ = train_dod_dl_rom(train, dod, dims, rom_config, arch)
                rep = relative_error(model, test)
                if keep_models:
                    table.models[(variant, arch.name)] = model
                if timing:
                    add_timings(rep, model, test, timing_reps, t_fom)
                table.rows.append({"variant": variant, "preset": arch.name,
                                   "active_weights": rep.active_weights, "E_R": rep.E_R,
                                   "t_fwd_ms": rep.t_fwd_ms, "t_fom_ms": rep.t_fom_ms,
                                   "speedup": rep.speedup})
                log.info("sweep %s/%s: weights %d E_R %.4f", variant, arch.name, rep.active_weights, rep.E_R)
            except Exception as exc:  # recorded, sweep continues
                table.failures.append({"variant": variant, "preset": arch.name, "error": str(exc)})
                log.warning("sweep %s/%s failed: %s", variant, arch.name, exc)

    for r in table.rows:
        base = table.cell(POD_DL_ROM, r["preset"])
        r["weight_ratio"] = r["active_weights"] / base["active_weights"] if base else math.nan
        r["time_ratio"] = r["t_fwd_ms"] / base["t_fwd_ms"] if base else math.nan
    order = {v: k for k, v in enumerate(VARIANTS)}
    table.rows.sort(key=lambda r: (order[r["variant"]], r["active_weights"]))
    return table

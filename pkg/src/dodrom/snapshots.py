"""Snapshot corpora: generation from the full-order model and persistence.

A store is three files sharing a stem: ``<stem>.bin`` (matrix container),
``<stem>.csv`` (columns ``col_index, mu1, mu2, nu1, nu2, t``) and ``<stem>.ini``
(grid and sampling descriptor).
"""

from __future__ import annotations

import configparser
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import fom
from .store import read_csv, read_matrix, write_csv, write_matrix

log = logging.getLogger(__name__)

PRODUCT = "product"
PAIRED = "paired"


@dataclass(frozen=True)
class BenchmarkConfig:
    nx: int = 60
    ny: int = 60
    T: float = 1.2
    n_t: int = 60
    n_s1: int = 10
    n_s2: int = 5
    seed: int = 0
    mu1_range: tuple[float, float] = fom.MU1_RANGE
    mu2_range: tuple[float, float] = fom.MU2_RANGE
    nu1_range: tuple[float, float] = fom.NU1_RANGE
    nu2_range: tuple[float, float] = fom.NU2_RANGE

    @property
    def grid(self) -> fom.Grid:
        return fom.Grid(self.nx, self.ny)

    @property
    def mu_box(self) -> np.ndarray:
        return np.array([self.mu1_range, self.mu2_range], dtype=float)

    @property
    def nu_box(self) -> np.ndarray:
        return np.array([self.nu1_range, self.nu2_range], dtype=float)


@dataclass(eq=False)
class SnapshotSet:
    """FOM trajectories stacked column-wise.

    ``pairs[p] = (i, j)`` names the trajectory for ``(mu[i], nu[j])``; its time
    samples occupy columns ``p * n_t .. p * n_t + n_t - 1``. Product sets list
    every ``(i, j)`` with ``i`` running fastest.
    """

    U: np.ndarray
    mu: np.ndarray
    nu: np.ndarray
    times: np.ndarray
    pairs: list[tuple[int, int]]
    config: BenchmarkConfig
    kind: str = PRODUCT
    mass: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.mass is None:
            self.mass = self.config.grid.mass
        if self.U.shape[1] != len(self.pairs) * len(self.times):
            raise ValueError("column count does not match pairs x times")

    @property
    def n_h(self) -> int:
        return self.U.shape[0]

    @property
    def n_data(self) -> int:
        return self.U.shape[1]

    @property
    def n_t(self) -> int:
        return len(self.times)

    @property
    def n_s1(self) -> int:
        return len(self.mu)

    @property
    def n_s2(self) -> int:
        return len(self.nu)

    @property
    def n_traj(self) -> int:
        return len(self.pairs)

    def column(self, i: int, j: int, k: int) -> int:
        return self._pair_index[(i, j)] * self.n_t + k

    @property
    def _pair_index(self) -> dict[tuple[int, int], int]:
        return {pair: p for p, pair in enumerate(self.pairs)}

    def index_map(self) -> dict[tuple[int, int, int], int]:
        return {(i, j, k): p * self.n_t + k
                for p, (i, j) in enumerate(self.pairs) for k in range(self.n_t)}

    def trajectory(self, p: int) -> np.ndarray:
        return self.U[:, p * self.n_t:(p + 1) * self.n_t]

    def column_params(self) -> np.ndarray:
        """Rows ``(mu1, mu2, nu1, nu2, t)`` for every column."""
        rows = []
        for i, j in self.pairs:
            for t in self.times:
                rows.append([*self.mu[i], *self.nu[j], t])
        return np.array(rows, dtype=float).reshape(-1, self.mu.shape[1] + self.nu.shape[1] + 1)

    def slice_columns(self, i: int, k: int) -> list[int]:
        """Columns of the ``(mu_i, t_k)`` slice, ordered by ``nu`` index."""
        idx = self._pair_index
        return [idx[(i, j)] * self.n_t + k for j in range(self.n_s2) if (i, j) in idx]

    def subset(self, pair_indices) -> "SnapshotSet":
        """Trajectories ``pairs[p]`` for ``p`` in ``pair_indices`` (parameter lists kept)."""
        pair_indices = list(pair_indices)
        cols = np.concatenate([np.arange(p * self.n_t, (p + 1) * self.n_t) for p in pair_indices]) \
            if pair_indices else np.zeros(0, dtype=int)
        return replace(self, U=self.U[:, cols], pairs=[self.pairs[p] for p in pair_indices],
                       kind=PAIRED if self.kind == PAIRED else "subset")


def sample_parameters(config: BenchmarkConfig, n_mu: int, n_nu: int,
                      rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    mb, nb = config.mu_box, config.nu_box
    mu = rng.uniform(mb[:, 0], mb[:, 1], size=(n_mu, 2))
    nu = rng.uniform(nb[:, 0], nb[:, 1], size=(n_nu, 2))
    return mu, nu


def _solve_group(args):
    config, mu, nus = args
    grid = config.grid
    geom = fom.GeomParams(*mu)
    try:
        flow = fom.solve_darcy(grid, geom, config.mu1_range, config.mu2_range)
        return [fom.solve_transport(grid, flow, geom, fom.PhysParams(*nu), config.T, config.n_t)
                for nu in nus]
    except (fom.SolverError, fom.ParameterError) as exc:
        raise type(exc)(f"{exc} [mu={tuple(mu)}]") from exc


def _assemble(config, mu, nu, pairs, kind, workers) -> SnapshotSet:
    # one Darcy solve per distinct mu, then every nu sharing it
    by_mu: dict[int, list[int]] = {}
    for p, (i, j) in enumerate(pairs):
        by_mu.setdefault(i, []).append(p)
    jobs = [(config, mu[i], [nu[pairs[p][1]] for p in ps]) for i, ps in by_mu.items()]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_solve_group, jobs))
    else:
        results = [_solve_group(job) for job in jobs]
    grid = config.grid
    U = np.empty((grid.n_cells, len(pairs) * config.n_t))
    for ps, trajs in zip(by_mu.values(), results):
        for p, traj in zip(ps, trajs):
            U[:, p * config.n_t:(p + 1) * config.n_t] = traj
    times = config.T / config.n_t * np.arange(1, config.n_t + 1)
    return SnapshotSet(U, mu, nu, times, list(pairs), config, kind)


def generate_snapshots(config: BenchmarkConfig, workers: int = 1) -> SnapshotSet:
    """Product design ``P1 x P2`` drawn i.i.d. uniform from the parameter boxes."""
    rng = np.random.default_rng(config.seed)
    mu, nu = sample_parameters(config, config.n_s1, config.n_s2, rng)
    pairs = [(i, j) for j in range(config.n_s2) for i in range(config.n_s1)]
    log.info("generating %d trajectories on %dx%d", len(pairs), config.nx, config.ny)
    return _assemble(config, mu, nu, pairs, PRODUCT, workers)


def generate_test_set(config: BenchmarkConfig, n_test: int, seed: int,
                      workers: int = 1) -> SnapshotSet:
    """``n_test`` i.i.d. joint samples ``(mu_i, nu_i)``."""
    rng = np.random.default_rng(seed)
    mu, nu = sample_parameters(config, n_test, n_test, rng)
    cfg = replace(config, n_s1=n_test, n_s2=n_test, seed=seed)
    return _assemble(cfg, mu, nu, [(i, i) for i in range(n_test)], PAIRED, workers)


def save_snapshots(snaps: SnapshotSet, stem: str | Path) -> Path:
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    write_matrix(stem.with_suffix(".bin"), snaps.U)
    params = snaps.column_params()
    write_csv(stem.with_suffix(".csv"), ["col_index", "mu1", "mu2", "nu1", "nu2", "t"],
              ([c, *row] for c, row in enumerate(params)))
    cfg = snaps.config
    cp = configparser.ConfigParser()
    cp["grid"] = {"nx": str(cfg.nx), "ny": str(cfg.ny)}
    cp["sampling"] = {
        "kind": snaps.kind, "T": repr(cfg.T), "n_t": str(snaps.n_t), "n_s1": str(snaps.n_s1),
        "n_s2": str(snaps.n_s2), "seed": str(cfg.seed),
        "mu1_range": _pair(cfg.mu1_range), "mu2_range": _pair(cfg.mu2_range),
        "nu1_range": _pair(cfg.nu1_range), "nu2_range": _pair(cfg.nu2_range),
        "pairs": " ".join(f"{i}:{j}" for i, j in snaps.pairs),
    }
    with open(stem.with_suffix(".ini"), "w") as fh:
        cp.write(fh)
    return stem.with_suffix(".bin")


def load_snapshots(stem: str | Path) -> SnapshotSet:
    stem = Path(stem)
    if stem.suffix in (".bin", ".csv", ".ini"):
        stem = stem.with_suffix("")
    cp = configparser.ConfigParser()
    if not cp.read(stem.with_suffix(".ini")):
        raise FileNotFoundError(f"missing snapshot descriptor {stem.with_suffix('.ini')}")
    s = cp["sampling"]
    cfg = BenchmarkConfig(
        nx=cp["grid"].getint("nx"), ny=cp["grid"].getint("ny"), T=s.getfloat("T"),
        n_t=s.getint("n_t"), n_s1=s.getint("n_s1"), n_s2=s.getint("n_s2"), seed=s.getint("seed"),
        mu1_range=_unpair(s["mu1_range"]), mu2_range=_unpair(s["mu2_range"]),
        nu1_range=_unpair(s["nu1_range"]), nu2_range=_unpair(s["nu2_range"]),
    )
    pairs = [tuple(int(x) for x in tok.split(":")) for tok in s["pairs"].split()]
    U = read_matrix(stem.with_suffix(".bin"))
    _, rows = read_csv(stem.with_suffix(".csv"))
    params = np.array([[float(x) for x in r[1:]] for r in rows])
    n_t = cfg.n_t
    mu = np.zeros((cfg.n_s1, 2))
    nu = np.zeros((cfg.n_s2, 2))
    for p, (i, j) in enumerate(pairs):
        mu[i] = params[p * n_t, 0:2]
        nu[j] = params[p * n_t, 2:4]
    times = params[:n_t, 4].copy()
    return SnapshotSet(U, mu, nu, times, pairs, cfg, s.get("kind", PRODUCT))


def _pair(r) -> str:
    return f"{float(r[0])!r}, {float(r[1])!r}"


def _unpair(text: str) -> tuple[float, float]:
    a, b = (float(x) for x in text.split(","))
    return (a, b)

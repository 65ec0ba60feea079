"""Catalyst-filter benchmark: parametric Darcy flow followed by advection-reaction transport.

Cell-centred finite volumes on the unit square. Cells are numbered row-major with
``x1`` fastest: ``cell = j * nx + i`` for the cell centred at ``((i+.5)h, (j+.5)h)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

K_COATING = 0.02
K_WASHCOAT = 0.5
V_IN = 10.0
ETA = 0.2
INLET = (0.8, 1.0)
OUTLET = (0.0, 0.2)

MU1_RANGE = (0.1, 0.3)
MU2_RANGE = (-math.pi / 4, math.pi / 4)
NU1_RANGE = (0.1, 0.3)
NU2_RANGE = (0.3, 1.0)

MAX_SUBSTEPS = 10**6


class ParameterError(ValueError):
    pass


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class Grid:
    nx: int
    ny: int

    @property
    def h(self) -> float:
        return 1.0 / self.nx

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def x1(self) -> np.ndarray:
        return np.tile((np.arange(self.nx) + 0.5) / self.nx, self.ny)

    @property
    def x2(self) -> np.ndarray:
        return np.repeat((np.arange(self.ny) + 0.5) / self.ny, self.nx)

    @property
    def cell_area(self) -> float:
        return 1.0 / (self.nx * self.ny)

    @property
    def mass(self) -> np.ndarray:
        """Diagonal of the mass matrix (cell areas)."""
        return np.full(self.n_cells, self.cell_area)

    def inlet_rows(self) -> np.ndarray:
        """Row indices ``j`` of left-boundary faces lying on the inlet."""
        y = (np.arange(self.ny) + 0.5) / self.ny
        return np.nonzero((y > INLET[0]) & (y < INLET[1]))[0]

    def outlet_rows(self) -> np.ndarray:
        y = (np.arange(self.ny) + 0.5) / self.ny
        return np.nonzero((y > OUTLET[0]) & (y < OUTLET[1]))[0]

    def boundary_tags(self) -> dict[str, list[tuple[str, int]]]:
        """Boundary faces as ``(side, index)`` pairs partitioned into inlet/outlet/wall."""
        inlet = set(self.inlet_rows().tolist())
        outlet = set(self.outlet_rows().tolist())
        tags: dict[str, list[tuple[str, int]]] = {"inlet": [], "outlet": [], "wall": []}
        for j in range(self.ny):
            tags["inlet" if j in inlet else "wall"].append(("left", j))
            tags["outlet" if j in outlet else "wall"].append(("right", j))
        for i in range(self.nx):
            tags["wall"].append(("bottom", i))
            tags["wall"].append(("top", i))
        return tags


@dataclass(frozen=True)
class GeomParams:
    mu1: float
    mu2: float


@dataclass(frozen=True)
class PhysParams:
    nu1: float
    nu2: float


def _check_range(name: str, value: float, bounds: tuple[float, float]) -> None:
    lo, hi = bounds
    if not (lo - 1e-12 <= value <= hi + 1e-12):
        raise ParameterError(f"{name}={value} outside [{lo}, {hi}]")


def filter_regions(x2: np.ndarray, mu1: float) -> tuple[np.ndarray, np.ndarray]:
    """Boolean indicators of the coating and washcoat bands at heights ``x2``."""
    hw = 0.3 - mu1
    d = np.abs(np.asarray(x2) - 0.5)
    coating = (d > hw) & (d < hw + mu1)
    washcoat = d < hw
    return coating, washcoat


def permeability_field(grid: Grid, mu1: float, mu1_range=MU1_RANGE) -> np.ndarray:
    _check_range("mu1", mu1, mu1_range)
    return permeability_at(grid.x2, mu1)


def permeability_at(x2, mu1: float) -> np.ndarray:
    coating, washcoat = filter_regions(x2, mu1)
    return np.where(coating, K_COATING, np.where(washcoat, K_WASHCOAT, 1.0))


def inflow_flux(x2, mu2: float) -> np.ndarray:
    """Shifted Poiseuille inflow vector(s) at heights ``x2``; shape ``(..., 2)``."""
    x2 = np.asarray(x2, dtype=float)
    mag = V_IN / (4.0 * ETA) * (0.1**2 - (x2 - 0.9) ** 2)
    return np.stack([mag * math.cos(mu2), mag * math.sin(mu2)], axis=-1)


def _inflow_face_integral(y0: float, y1: float, mu2: float) -> float:
    """Exact integral of the normal inflow over ``[y0, y1]`` (Simpson is exact on parabolas)."""
    ym = 0.5 * (y0 + y1)
    f = lambda y: V_IN / (4.0 * ETA) * (0.1**2 - (y - 0.9) ** 2)
    return (y1 - y0) / 6.0 * (f(y0) + 4.0 * f(ym) + f(y1)) * math.cos(mu2)


def inlet_profile(x2) -> np.ndarray:
    """Imposed inlet concentration: raised cosine centred at ``x2 = 0.9``."""
    d = np.abs(np.asarray(x2, dtype=float) - 0.9)
    return np.where(d < 0.1, 0.5 * (1.0 + np.cos(np.pi * d / 0.1)), 0.0)


@dataclass
class FlowField:
    """Face fluxes (integrated over faces) of the Darcy velocity and cell pressures.

    ``flux_x[j, i]`` is the flux in +x1 through the vertical face left of cell
    column ``i`` (shape ``ny x (nx+1)``); ``flux_y[j, i]`` the flux in +x2 through
    the horizontal face below row ``j`` (shape ``(ny+1) x nx``).
    """

    grid: Grid
    pressure: np.ndarray
    flux_x: np.ndarray
    flux_y: np.ndarray
    permeability: np.ndarray
    residual: float = 0.0

    def divergence(self) -> np.ndarray:
        fx, fy = self.flux_x, self.flux_y
        div = (fx[:, 1:] - fx[:, :-1]) + (fy[1:, :] - fy[:-1, :])
        return div.ravel()

    def velocity(self) -> np.ndarray:
        """Cell-averaged velocity vectors, shape ``(n_cells, 2)``."""
        h = self.grid.h
        vx = 0.5 * (self.flux_x[:, 1:] + self.flux_x[:, :-1]) / h
        vy = 0.5 * (self.flux_y[1:, :] + self.flux_y[:-1, :]) / h
        return np.stack([vx.ravel(), vy.ravel()], axis=1)

    def inflow_total(self) -> float:
        return float(self.flux_x[:, 0].sum())

    def outflow_total(self) -> float:
        return float(self.flux_x[:, -1].sum())


def _harmonic(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return 2.0 * a * b / (a + b)


def solve_darcy(grid: Grid, geom: GeomParams, mu1_range=MU1_RANGE, mu2_range=MU2_RANGE,
                permeability: np.ndarray | None = None, tol: float = 1e-10,
                cg_rtol: float = 1e-12, max_iter: int = 20000) -> FlowField:
    """Two-point-flux solve of the pressure equation with the benchmark boundary data.

    The SPD system is solved by Jacobi-preconditioned conjugate gradients; a
    max-norm residual above ``tol`` raises :class:`SolverError`.

    ``permeability`` overrides the filter geometry (used for diagnostics).
    """
    _check_range("mu2", geom.mu2, mu2_range)
    if grid.nx != grid.ny:
        raise ParameterError("two-point fluxes assume square cells (nx == ny)")
    if permeability is None:
        k = permeability_field(grid, geom.mu1, mu1_range)
    else:
        k = np.asarray(permeability, dtype=float)
    nx, ny, h = grid.nx, grid.ny, grid.h
    kk = k.reshape(ny, nx)
    idx = np.arange(nx * ny).reshape(ny, nx)

    # unit-aspect cells: transmissibility = k_face * (face length / centre distance) = k_face
    tx = _harmonic(kk[:, :-1], kk[:, 1:])
    ty = _harmonic(kk[:-1, :], kk[1:, :])
    out_rows = grid.outlet_rows()
    t_out = np.zeros(ny)
    t_out[out_rows] = 2.0 * kk[out_rows, -1]

    rows = np.concatenate([idx[:, :-1].ravel(), idx[:-1, :].ravel()])
    cols = np.concatenate([idx[:, 1:].ravel(), idx[1:, :].ravel()])
    vals = np.concatenate([tx.ravel(), ty.ravel()])
    n = nx * ny
    off = sp.coo_matrix((-vals, (rows, cols)), shape=(n, n))
    diag = np.zeros(n)
    np.add.at(diag, rows, vals)
    np.add.at(diag, cols, vals)
    diag[idx[:, -1]] += t_out
    A = (off + off.T + sp.diags(diag)).tocsr()

    inflow = np.zeros(ny)
    for j in grid.inlet_rows():
        inflow[j] = _inflow_face_integral(j * h, (j + 1) * h, geom.mu2)
    rhs = np.zeros(n)
    rhs[idx[:, 0]] += inflow

    jacobi = sp.diags(1.0 / A.diagonal())
    p, info = spla.cg(A, rhs, rtol=cg_rtol, atol=0.0, M=jacobi, maxiter=max_iter)
    residual = float(np.abs(A @ p - rhs).max()) if n else 0.0
    if info != 0 or not np.all(np.isfinite(p)) or residual > tol:
        raise SolverError(f"Darcy CG did not converge for {geom} (info={info}): "
                          f"residual {residual:.3e}")

    pp = p.reshape(ny, nx)
    flux_x = np.zeros((ny, nx + 1))
    flux_x[:, 1:-1] = tx * (pp[:, :-1] - pp[:, 1:])
    flux_x[:, 0] = inflow
    flux_x[:, -1] = t_out * pp[:, -1]
    flux_y = np.zeros((ny + 1, nx))
    flux_y[1:-1, :] = ty * (pp[:-1, :] - pp[1:, :])
    return FlowField(grid, p, flux_x, flux_y, k, residual)


def transport_operator(flow: FlowField, reaction: np.ndarray) -> tuple[sp.csr_matrix, float]:
    """Semi-discrete upwind operator ``L`` with ``du/dt = L u`` (inlet feed excluded),
    and the largest stable explicit step rate ``max_i (outflow_i / area + c_i)``."""
    grid = flow.grid
    nx, ny = grid.nx, grid.ny
    area = grid.cell_area
    idx = np.arange(nx * ny).reshape(ny, nx)
    rows, cols, vals = [], [], []

    def couple(up: np.ndarray, down: np.ndarray, f: np.ndarray) -> None:
        # flux f >= 0 leaves `up` and enters `down`
        rows.extend([up, down])
        cols.extend([up, up])
        vals.extend([-f / area, f / area])

    fx = flow.flux_x[:, 1:-1]
    left, right = idx[:, :-1], idx[:, 1:]
    pos = fx > 0
    couple(left[pos], right[pos], fx[pos])
    couple(right[~pos], left[~pos], -fx[~pos])
    fy = flow.flux_y[1:-1, :]
    below, above = idx[:-1, :], idx[1:, :]
    pos = fy > 0
    couple(below[pos], above[pos], fy[pos])
    couple(above[~pos], below[~pos], -fy[~pos])
    out = np.maximum(flow.flux_x[:, -1], 0.0)
    rows.append(idx[:, -1])
    cols.append(idx[:, -1])
    vals.append(-out / area)

    n = nx * ny
    rows.append(np.arange(n))
    cols.append(np.arange(n))
    vals.append(-reaction)
    r = np.concatenate([np.ravel(a) for a in rows])
    c = np.concatenate([np.ravel(a) for a in cols])
    v = np.concatenate([np.ravel(a) for a in vals])
    L = sp.csr_matrix((v, (r, c)), shape=(n, n))
    rate = float(np.max(-L.diagonal())) if n else 0.0
    return L, rate


def solve_transport(grid: Grid, flow: FlowField, geom: GeomParams, phys: PhysParams,
                    T: float, n_t: int, cfl: float = 0.9,
                    inlet: np.ndarray | None = None) -> np.ndarray:
    """Explicit-Euler upwind transport sampled at ``t_k = k T / n_t``, ``k = 1..n_t``.

    Returns the trajectory matrix ``(n_cells, n_t)``. ``inlet`` overrides the
    imposed inlet concentration on the inlet cells.
    """
    if n_t < 2:
        raise ParameterError("n_t must be at least 2")
    coating, washcoat = filter_regions(grid.x2, geom.mu1)
    reaction = phys.nu1 * coating + phys.nu2 * washcoat
    L, rate = transport_operator(flow, reaction)

    dt_out = T / n_t
    n_sub = max(1, math.ceil(dt_out * rate / cfl))
    if n_sub > MAX_SUBSTEPS:
        raise SolverError(f"CFL requires {n_sub} sub-steps per output interval")
    dt = dt_out / n_sub
    M = (sp.identity(grid.n_cells, format="csr") + dt * L).tocsr()

    rows = grid.inlet_rows()
    inlet_cells = rows * grid.nx
    g = inlet_profile((rows + 0.5) / grid.ny) if inlet is None else np.asarray(inlet, float)

    u = np.zeros(grid.n_cells)
    u[inlet_cells] = g
    out = np.empty((grid.n_cells, n_t))
    for k in range(n_t):
        for _ in range(n_sub):
            u = M @ u
            u[inlet_cells] = g
        out[:, k] = u
    return out


def solve_fom(grid: Grid, geom: GeomParams, phys: PhysParams, T: float, n_t: int,
              mu1_range=MU1_RANGE, mu2_range=MU2_RANGE) -> np.ndarray:
    flow = solve_darcy(grid, geom, mu1_range, mu2_range)
    return solve_transport(grid, flow, geom, phys, T, n_t)

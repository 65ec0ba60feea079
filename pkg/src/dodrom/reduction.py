"""Proper orthogonal decomposition with respect to a mass matrix, and spectral
diagnostics of the global and (mu, t)-sliced snapshot manifolds.

The mass matrix ``G`` may be passed as a 1-d diagonal or a dense 2-d array.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .store import read_csv, read_matrix, write_csv, write_matrix

RANK_TOL = 1e-14


class RankError(ValueError):
    pass


def apply_mass(G: np.ndarray, X: np.ndarray) -> np.ndarray:
    G = np.asarray(G)
    if G.ndim == 1:
        return G[:, None] * X if X.ndim == 2 else G * X
    return G @ X


def g_inner(G: np.ndarray, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """``X^T G Y``."""
    return X.T @ apply_mass(G, Y)


def g_norm_sq(G: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Column-wise squared G-norms."""
    return np.sum(X * apply_mass(G, X), axis=0)


def _sorted_eigh(C: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    vals, vecs = np.linalg.eigh(C)
    order = np.argsort(vals)[::-1]
    vals = np.clip(vals[order], 0.0, None)
    vecs = vecs[:, order]
    # first nonzero component of each eigenvector positive
    for k in range(vecs.shape[1]):
        nz = np.flatnonzero(np.abs(vecs[:, k]) > 1e-14)
        if nz.size and vecs[nz[0], k] < 0:
            vecs[:, k] = -vecs[:, k]
    return vals, vecs


@dataclass(eq=False)
class PodBasis:
    """G-orthonormal POD modes plus the full Gram spectrum.

    ``eigenvalues`` are the squared singular values ``sigma_k^2`` of the
    weighted Gram matrix ``weight * U^T G U``.
    """

    modes: np.ndarray
    eigenvalues: np.ndarray
    weight: float

    @property
    def n_modes(self) -> int:
        return self.modes.shape[1]

    def truncate(self, n: int) -> "PodBasis":
        if n > self.n_modes:
            raise RankError(f"basis has only {self.n_modes} modes, asked for {n}")
        return PodBasis(self.modes[:, :n].copy(), self.eigenvalues, self.weight)

    def tail(self, n: int) -> float:
        return float(np.sum(self.eigenvalues[n:]))


def pod(U: np.ndarray, G: np.ndarray, N: int, weight: float | None = None) -> PodBasis:
    """Method-of-snapshots POD: eigenpairs of ``weight * U^T G U``.

    Modes are ``xi_k = sqrt(weight) U psi_k / sigma_k`` so that ``A^T G A = I``
    for any weight. ``weight`` defaults to ``1 / N_data`` (normalised parameter box).
    """
    U = np.asarray(U, dtype=float)
    n_data = U.shape[1]
    if weight is None:
        weight = 1.0 / n_data
    if weight <= 0:
        raise ValueError("weight must be positive")
    C = weight * g_inner(G, U, U)
    C = 0.5 * (C + C.T)
    vals, vecs = _sorted_eigh(C)
    if N > 0 and (N > len(vals) or vals[N - 1] < RANK_TOL * vals[0] or vals[0] == 0.0):
        raise RankError(f"requested {N} modes but numerical rank is "
                        f"{int(np.sum(vals >= RANK_TOL * max(vals[0], 1e-300)))}")
    sigma = np.sqrt(vals[:N])
    modes = np.sqrt(weight) * (U @ vecs[:, :N]) / sigma if N else np.zeros((U.shape[0], 0))
    return PodBasis(modes, vals, float(weight))


def projection_error(U: np.ndarray, basis, G: np.ndarray, weight: float | None = None) -> float:
    """``weight * sum_cols ||u - A A^T G u||_G^2``.

    ``basis`` is a :class:`PodBasis` (its weight is used) or a plain mode matrix.
    """
    if isinstance(basis, PodBasis):
        A, w = basis.modes, basis.weight if weight is None else weight
    else:
        A = np.asarray(basis)
        w = 1.0 / U.shape[1] if weight is None else weight
    R = U - A @ g_inner(G, A, U) if A.shape[1] else U
    return float(w * np.sum(g_norm_sq(G, R)))


def pre_reduce(U: np.ndarray, A: np.ndarray, G: np.ndarray) -> np.ndarray:
    """Coordinates ``A^T G U`` of the snapshots in a G-orthonormal basis."""
    return g_inner(G, A, U)


@dataclass(eq=False)
class SlicedSpectrum:
    """Per-(mu_i, t_k) eigenvalue lists of the nu-slices; ``values[i, k]`` is sorted descending."""

    values: np.ndarray
    weight: float

    def relative_tail(self, n: int) -> np.ndarray:
        total = self.values.sum(axis=-1)
        tail = self.values[..., n:].sum(axis=-1)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.sqrt(np.where(total > 0, tail / total, 0.0))


def slice_matrix(snaps, i: int, k: int) -> np.ndarray:
    return snaps.U[:, snaps.slice_columns(i, k)]


def sliced_spectra(snaps, A: np.ndarray | None = None, weight: float | None = None) -> SlicedSpectrum:
    """Spectra of ``weight * U_pre(mu,t) U_pre(mu,t)^T`` for every (mu_i, t_k).

    Computed via the small ``n_s2 x n_s2`` Gram matrix, which shares the nonzero
    eigenvalues. ``A=None`` skips pre-reduction and uses G-inner products of the
    raw slices.
    """
    n_s2 = snaps.n_s2
    if weight is None:
        weight = 1.0 / n_s2
    out = np.zeros((snaps.n_s1, snaps.n_t, n_s2))
    for i in range(snaps.n_s1):
        for k in range(snaps.n_t):
            S = slice_matrix(snaps, i, k)
            if A is not None:
                S = pre_reduce(S, A, snaps.mass)
                C = S.T @ S
            else:
                C = g_inner(snaps.mass, S, S)
            vals = np.linalg.eigvalsh(weight * 0.5 * (C + C.T))[::-1]
            out[i, k, :len(vals)] = np.clip(vals, 0.0, None)
    return SlicedSpectrum(out, float(weight))


def slice_optimal_residual(U_pre: np.ndarray, n: int, weight: float) -> float:
    """Residual of the best rank-``n`` Euclidean projection of a slice, via explicit SVD
    projection (independent route to the eigenvalue tail)."""
    Q, _, _ = np.linalg.svd(U_pre, full_matrices=False)
    Q = Q[:, :n]
    R = U_pre - Q @ (Q.T @ U_pre)
    return float(weight * np.sum(R * R))


def knw_curves(snaps, n_max: int, A: np.ndarray | None = None) -> np.ndarray:
    """Rows ``(n, global relative tail, worst-slice relative tail)`` for ``n = 1..n_max``."""
    C = g_inner(snaps.mass, snaps.U, snaps.U) / snaps.n_data
    glob = np.clip(np.linalg.eigvalsh(0.5 * (C + C.T))[::-1], 0.0, None)
    spec = sliced_spectra(snaps, A)
    if n_max > snaps.n_s2:
        raise ValueError(f"n_max={n_max} exceeds slice rank bound {snaps.n_s2}")
    rows = []
    total = glob.sum()
    for n in range(1, n_max + 1):
        g_tail = np.sqrt(glob[n:].sum() / total) if total > 0 else 0.0
        rows.append((n, float(g_tail), float(spec.relative_tail(n).max())))
    return np.array(rows)


def save_basis(basis: PodBasis, stem: str | Path) -> None:
    stem = Path(stem)
    write_matrix(stem.with_suffix(".bin"), basis.modes)
    write_csv(stem.with_name(stem.name + "_eigenvalues.csv"), ["k", "sigma_sq"],
              ((k + 1, v) for k, v in enumerate(basis.eigenvalues)),
              comment=f"weight={basis.weight!r}")


def load_basis(stem: str | Path) -> PodBasis:
    stem = Path(stem)
    if stem.suffix == ".bin":
        stem = stem.with_suffix("")
    modes = read_matrix(stem.with_suffix(".bin"))
    eig_path = stem.with_name(stem.name + "_eigenvalues.csv")
    with open(eig_path) as fh:
        first = fh.readline()
    weight = float(first.split("weight=")[1]) if "weight=" in first else 1.0
    _, rows = read_csv(eig_path)
    return PodBasis(modes, np.array([float(r[1]) for r in rows]), weight)

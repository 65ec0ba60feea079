"""On-disk formats: dense matrix container, CSV sidecars, FNV-1a fingerprints.

Matrix container (little-endian)::

    magic    8 bytes  b"DODMAT\\x00\\x01"
    version  uint32   1
    reserved uint32   0
    rows     uint64
    cols     uint64
    data     rows*cols float64, row-major
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path
from typing import Iterable, Sequence

import numba
import numpy as np

MAT_MAGIC = b"DODMAT\x00\x01"
MAT_VERSION = 1
_HEADER = struct.Struct("<8sIIQQ")

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


class StoreError(ValueError):
    pass


def write_matrix(path: str | Path, matrix: np.ndarray) -> None:
    m = np.ascontiguousarray(matrix, dtype="<f8")
    if m.ndim != 2:
        raise StoreError(f"expected a 2-d matrix, got shape {m.shape}")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAT_MAGIC, MAT_VERSION, 0, m.shape[0], m.shape[1]))
        fh.write(m.tobytes())


def read_matrix(path: str | Path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if len(buf) < _HEADER.size:
        raise StoreError(f"{path}: truncated header")
    magic, version, _, rows, cols = _HEADER.unpack_from(buf)
    if magic != MAT_MAGIC:
        raise StoreError(f"{path}: not a matrix store (bad magic)")
    if version != MAT_VERSION:
        raise StoreError(f"{path}: unsupported version {version}")
    expected = _HEADER.size + 8 * rows * cols
    if len(buf) != expected:
        raise StoreError(f"{path}: size {len(buf)} does not match header ({expected})")
    data = np.frombuffer(buf, "<f8", rows * cols, _HEADER.size)
    return data.reshape(rows, cols).astype(np.float64)


def is_matrix_file(path: str | Path) -> bool:
    with open(path, "rb") as fh:
        return fh.read(8) == MAT_MAGIC


@numba.njit(cache=True)
def _fnv1a64_kernel(data):
    h = np.uint64(FNV_OFFSET)
    prime = np.uint64(FNV_PRIME)
    for b in data:
        h = (h ^ np.uint64(b)) * prime
    return h


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash."""
    return int(_fnv1a64_kernel(np.frombuffer(data, dtype=np.uint8)))


def file_fingerprint(path: str | Path) -> str:
    return f"{fnv1a64(Path(path).read_bytes()):016x}"


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence],
              comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_csv(path: str | Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    return header, [row for row in reader]


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def array_fingerprint(a: np.ndarray) -> str:
    """FNV-1a 64 of the float64 bytes of ``a``, as 16 hex digits."""
    return f"{fnv1a64(np.ascontiguousarray(a, dtype='<f8').tobytes()):016x}"


def tuple_fingerprints(snaps) -> list[str]:
    """One fingerprint per trajectory parameter tuple ``(mu, nu)``."""
    return [array_fingerprint(np.r_[snaps.mu[i], snaps.nu[j]]) for i, j in snaps.pairs]

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from dodrom.store import (StoreError, array_fingerprint, file_fingerprint, fnv1a64, is_matrix_file, read_csv,
                          read_matrix, write_csv, write_matrix)


def _ref_fnv(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h = ((h ^ b) * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def test_fnv_known_vectors():
    assert fnv1a64(b"") == 0xCBF29CE484222325
    assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C
    assert fnv1a64(b"foobar") == 0x85944171F73967E8


@given(st.binary(max_size=200))
def test_fnv_matches_reference(data):
    assert fnv1a64(data) == _ref_fnv(data)


@given(arrays(np.float64, st.tuples(st.integers(0, 6), st.integers(0, 6)),
              elements=st.floats(allow_nan=False, width=64)))
def test_matrix_round_trip(tmp_path_factory, m):
    p = tmp_path_factory.mktemp("m") / "a.bin"
    write_matrix(p, m)
    back = read_matrix(p)
    assert back.shape == m.shape and back.tobytes() == m.tobytes()
    assert is_matrix_file(p)


def test_matrix_header(tmp_path):
    p = tmp_path / "a.bin"
    write_matrix(p, np.arange(6.0).reshape(2, 3))
    buf = p.read_bytes()
    assert buf[:8] == b"DODMAT\x00\x01" and len(buf) == 32 + 48
    assert int.from_bytes(buf[16:24], "little") == 2 and int.from_bytes(buf[24:32], "little") == 3
    assert np.frombuffer(buf[32:40], "<f8")[0] == 0.0 and np.frombuffer(buf[40:48], "<f8")[0] == 1.0


def test_matrix_errors(tmp_path):
    p = tmp_path / "a.bin"
    write_matrix(p, np.ones((2, 2)))
    good = p.read_bytes()
    for bad in [b"NOTAMATX" + good[8:], good[:-8], good[:10], good[:8] + b"\x02" + good[9:]]:
        p.write_bytes(bad)
        with pytest.raises(StoreError):
            read_matrix(p)
    with pytest.raises(StoreError):
        write_matrix(p, np.ones(3))


def test_fingerprints(tmp_path):
    p = tmp_path / "a.bin"
    write_matrix(p, np.eye(2))
    assert file_fingerprint(p) == f"{_ref_fnv(p.read_bytes()):016x}"
    assert array_fingerprint(np.eye(2)) == f"{_ref_fnv(np.eye(2).tobytes()):016x}"
    assert array_fingerprint(np.eye(2)) != array_fingerprint(2 * np.eye(2))


def test_csv_round_trip(tmp_path):
    p = tmp_path / "t.csv"
    write_csv(p, ["a", "b"], [(1, 0.1), (2, 1 / 3)], comment="schema=x/1")
    assert p.read_text().splitlines()[0] == "# schema=x/1"
    header, rows = read_csv(p)
    assert header == ["a", "b"] and float(rows[1][1]) == 1 / 3

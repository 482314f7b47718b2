import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from gavsim import tensorio
from gavsim.core import IntMatrix
from gavsim.errors import ConfigError, RangeError


@given(arr=arrays(np.int64, st.lists(st.integers(0, 5), min_size=0, max_size=4).map(tuple),
                  elements=st.integers(-(2**31), 2**31 - 1)))
def test_encode_decode_roundtrip(arr):
    buf = tensorio.encode(arr, bits=32, signed=True)
    t, end = tensorio.decode(buf)
    assert end == len(buf)
    assert t.data.shape == arr.shape
    assert np.array_equal(t.data, arr)


def test_header_layout():
    buf = tensorio.encode(np.array([[1, -2, 3]]), bits=4, signed=True)
    magic, version, dtype, signed, bits, ndim = struct.unpack_from("<4s5I", buf)
    assert (magic, version, dtype, signed, bits, ndim) == (b"GVT1", 1, 0, 1, 4, 2)
    assert struct.unpack_from("<2I", buf, 24) == (1, 3)
    assert np.frombuffer(buf[32:], "<i4").tolist() == [1, -2, 3]


def test_concatenated_records():
    buf = tensorio.encode(np.arange(3), 8) + tensorio.encode(np.ones((2, 2)), 8, signed=False)
    a, off = tensorio.decode(buf)
    b, end = tensorio.decode(buf, off)
    assert a.data.tolist() == [0, 1, 2] and b.data.shape == (2, 2) and not b.signed and end == len(buf)


@pytest.mark.parametrize("mutate", [lambda b: b"XXXX" + b[4:], lambda b: b[:10], lambda b: b[:-2],
                                    lambda b: b[:4] + struct.pack("<I", 9) + b[8:]])
def test_decode_rejects_bad_input(mutate):
    with pytest.raises(ConfigError):
        tensorio.decode(mutate(tensorio.encode(np.arange(4), 8)))


def test_matrix_files(tmp_path):
    m = IntMatrix(np.array([[1, -8], [7, 0]]), bits=4)
    tensorio.write_matrix(tmp_path / "m.gvt", m)
    assert tensorio.read_matrix(tmp_path / "m.gvt") == m
    tensorio.write_tensor(tmp_path / "v.gvt", np.arange(3), 4)
    with pytest.raises(ConfigError):
        tensorio.read_matrix(tmp_path / "v.gvt")


def test_csv_import(tmp_path):
    m = tensorio.matrix_from_csv("# comment\n1,2\n-3,4\n", bits=4)
    assert m.data.tolist() == [[1, 2], [-3, 4]]
    p = tmp_path / "m.csv"
    p.write_text("0,1\n2,3\n")
    assert tensorio.matrix_from_csv(p, bits=2, signed=False).data.tolist() == [[0, 1], [2, 3]]
    with pytest.raises(ConfigError):
        tensorio.matrix_from_csv("1,2\n3\n", bits=4)
    with pytest.raises(RangeError):
        tensorio.matrix_from_csv("9\n", bits=4)

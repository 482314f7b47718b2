import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from gavsim.errors import NumericError, ShapeError
from gavsim.metrics import gen_characterization_matrices, histogram_flatness, symmetric_quantize, var_ned


def two_pass_var_ned(e, a):
    e = [float(x) for x in e]
    a = [float(x) for x in a]
    m = max(abs(x) for x in e)
    ned = [(x - y) / m for x, y in zip(e, a)]
    mean = sum(ned) / len(ned)
    return sum((v - mean) ** 2 for v in ned) / len(ned)


def test_examples():
    s = var_ned([2, 2], [1, 2])
    assert s.mean_ned == 0.25 and s.var_ned == 0.0625
    assert s.mse == 0.5 and s.e_max == 2 and s.n == 2
    assert var_ned([3, -7, 1], [3, -7, 1]).var_ned == 0.0


def test_matches_two_pass_oracle(rng):
    e = rng.integers(-1000, 1000, 10_000)
    a = e + rng.integers(-20, 20, 10_000)
    assert var_ned(e, a).var_ned == pytest.approx(two_pass_var_ned(e, a), rel=1e-12)


@given(arrays(np.int64, st.integers(1, 40), elements=st.integers(-500, 500)),
       st.integers(0, 2**32 - 1))
def test_negation_invariance(e, seed):
    if not np.any(e):
        e = e.copy()
        e[0] = 1
    a = e + np.random.default_rng(seed).integers(-3, 4, e.shape)
    assert var_ned(-e, -a).var_ned == pytest.approx(var_ned(e, a).var_ned, rel=1e-12, abs=1e-18)


def test_errors():
    with pytest.raises(NumericError):
        var_ned([0, 0], [1, 0])
    with pytest.raises(ShapeError):
        var_ned([1, 2], [1])


def test_symmetric_quantize():
    q, s = symmetric_quantize(np.array([-1.0, 0.5, 0.26, 1.0]), 3)
    assert s == pytest.approx(1 / 3)
    assert q.tolist() == [-3, 2, 1, 3]


def test_characterization_matrices():
    A, B = gen_characterization_matrices(576, 64, 64, a_bits=8, seed=3)
    A2, B2 = gen_characterization_matrices(576, 64, 64, a_bits=8, seed=3)
    assert np.array_equal(A.data, A2.data) and np.array_equal(B.data, B2.data)
    assert A.shape == (576, 64) and B.shape == (64, 576)
    assert A.bits == B.bits == 8
    assert histogram_flatness(B.data @ A.data) <= 3.0
    A4, B4 = gen_characterization_matrices(64, 16, 8, a_bits=4, b_bits=2, seed=0)
    assert (A4.bits, B4.bits) == (4, 2) and np.abs(B4.data).max() <= 1
    with pytest.raises(ShapeError):
        gen_characterization_matrices(8, 16, 4)


def test_histogram_flatness():
    assert histogram_flatness(np.arange(640), bins=64) == 1.0
    assert histogram_flatness([0, 0, 10], bins=4) == float("inf")

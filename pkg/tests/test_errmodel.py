import numpy as np
import pytest

from gavsim.errmodel import ErrorLut, calibrate, n_conditions, prev_bin, sample_errors
from gavsim.errors import CalibrationError, ConfigError
from gavsim.oracle import ErrorTrace, TimingConfig, build_ipe, density_pair_inputs, generate_traces


@pytest.fixture(scope="module")
def trace():
    net = build_ipe(32)
    cfg = TimingConfig(delay_scale=1.3, jitter_sigma=0.15, seed=2)
    return generate_traces(net, cfg, density_pair_inputs(), 100_000, seed=4)


@pytest.fixture(scope="module")
def long_trace():
    net = build_ipe(32)
    cfg = TimingConfig(delay_scale=1.3, jitter_sigma=0.15, seed=2)
    return generate_traces(net, cfg, density_pair_inputs(), 1_000_000, seed=5)


def test_prev_bin_examples():
    assert [prev_bin(p, 576, 16) for p in (0, 36, 37, 576)] == [0, 0, 1, 15]
    assert prev_bin(np.arange(33), 32, 16).max() == 15
    assert np.all(np.diff(prev_bin(np.arange(577), 576, 16)) >= 0)


def test_table_shapes():
    lut = ErrorLut.zeros(32)
    assert [t.shape[2] for t in lut.tables] == [4, 4, 4, 4, 2, 1]
    assert n_conditions(5, 6, 2) == 1
    assert lut.full_table().shape == (6, 33, 16, 4)


def test_calibration_frequency():
    exact = np.full(10, 5)
    prev = np.zeros(10, dtype=int)
    sampled = exact.copy()
    sampled[:3] ^= 1  # flip bit 0 on three records
    lut = calibrate(ErrorTrace(32, exact, prev, sampled), lam=0.0)
    assert lut.tables[0][5, 0, 0] == pytest.approx(0.3)
    assert lut.counts[0][5, 0, 0] == 10 and lut.flips[0][5, 0, 0] == 3
    # unobserved cells are zero, smoothed cells shrink towards one half
    assert lut.tables[0][6, 0, 0] == 0.0
    smoothed = calibrate(ErrorTrace(32, exact, prev, sampled), lam=0.5)
    assert smoothed.tables[0][5, 0, 0] == pytest.approx(3.5 / 11)


def test_error_free_trace_gives_zero_lut():
    exact = np.arange(33)
    tr = ErrorTrace(32, exact, np.roll(exact, 1), exact)
    assert all(not t.any() for t in calibrate(tr, lam=0.0).tables)
    # smoothing keeps observed cells away from exactly 0
    assert calibrate(tr).tables[0][3, 0, 0] == pytest.approx(0.5 / 2)


def test_zero_lut_is_identity(rng):
    exact = rng.integers(0, 33, 5000)
    prev = rng.integers(0, 33, 5000)
    assert np.array_equal(sample_errors(exact, prev, ErrorLut.zeros(32), rng), exact)


def test_certain_flip():
    lut = ErrorLut.constant(32, {2: 1.0})
    exact = np.arange(33)
    out = sample_errors(exact, exact, lut, np.random.default_rng(0))
    assert np.array_equal(out, exact ^ 4)


def test_neighbour_conditioning():
    # bit 4 flips only when bit 5 flipped
    lut = ErrorLut.constant(32, {5: 0.5})
    lut.tables[4][:, :, 1] = 1.0
    exact = np.zeros(20_000, dtype=int)
    out = sample_errors(exact, exact, lut, np.random.default_rng(1))
    e5, e4 = (out >> 5) & 1, (out >> 4) & 1
    assert np.array_equal(e4, e5)
    assert 0.45 < e5.mean() < 0.55


def test_json_roundtrip(tmp_path, trace):
    lut = calibrate(trace)
    lut.save(tmp_path / "lut.json")
    back = ErrorLut.load(tmp_path / "lut.json")
    assert back.source_digest == lut.source_digest
    for a, b in zip(lut.tables + lut.counts, back.tables + back.counts):
        assert np.array_equal(a, b)
    with pytest.raises(ConfigError):
        ErrorLut.from_json({"format": "other"})


def test_marginal_fidelity(trace):
    """Resampled flip counts per bit agree with the table probabilities they
    were drawn from, within three standard errors at 1e5 samples."""
    lut = calibrate(trace)
    out = sample_errors(trace.exact, trace.prev, lut, np.random.default_rng(7))
    resampled = calibrate(ErrorTrace(32, trace.exact, trace.prev, out), lam=0.0)
    for b in range(6):
        p, n = lut.tables[b], resampled.counts[b]
        expected = float((p * n).sum())
        se = float(np.sqrt((p * (1 - p) * n).sum()))
        assert abs(resampled.flips[b].sum() - expected) <= 3 * se + 1e-9, b


def test_resample_self_consistency(long_trace):
    trace = long_trace
    lut = calibrate(trace)
    out = sample_errors(trace.exact, trace.prev, lut, np.random.default_rng(8))
    refit = calibrate(ErrorTrace(32, trace.exact, trace.prev, out), lam=0.0)
    for b in range(6):
        busy = (lut.counts[b] >= 1000) & (refit.counts[b] >= 1000)
        assert busy.any()
        o = lut.flips[b][busy].sum() / lut.counts[b][busy].sum()
        m = refit.flips[b][busy].sum() / refit.counts[b][busy].sum()
        # lambda biases a zero-flip cell by at most lam / (n + 2 lam)
        assert abs(m - o) <= 0.10 * o + lut.lam / 1000, (b, m, o)


def test_errors():
    with pytest.raises(CalibrationError):
        calibrate([])
    with pytest.raises(CalibrationError):
        calibrate([ErrorTrace(32, [1], [0], [1]), ErrorTrace(16, [1], [0], [1])])
    with pytest.raises(ConfigError):
        sample_errors([40], [0], ErrorLut.zeros(32), np.random.default_rng(0))
    with pytest.raises(ConfigError):
        sample_errors([1, 2], [0], ErrorLut.zeros(32), np.random.default_rng(0))
    with pytest.raises(ConfigError):
        ErrorLut(32, 2, 16, [np.zeros((33, 16, 4))])

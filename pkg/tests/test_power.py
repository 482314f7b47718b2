import pytest

from gavsim.core import ArrayShape, GavSchedule, Precision
from gavsim.errors import ConfigError
from gavsim.power import REFERENCE_SHAPE, PowerModel, default_calibration, ideal_throughput_tops

# reported efficiency bounds (TOP/sW): fully guarded, fully approximate
TABLE = {"a8w8": (3.56, 6.52), "a4w4": (12.52, 23.78), "a3w3": (19.37, 38.13), "a2w2": (45.87, 89.32)}


def sched(p, G):
    return GavSchedule(p.a_bits, p.b_bits, G)


def test_ideal_throughput():
    assert ideal_throughput_tops(REFERENCE_SHAPE, "a2w2") == pytest.approx(1.8432, rel=1e-12)
    assert ideal_throughput_tops(REFERENCE_SHAPE, "a2w2") == pytest.approx(1.84, rel=3e-3)


@pytest.mark.parametrize("name", list(TABLE))
def test_reproduces_efficiency_table(name):
    pm = default_calibration()
    p = Precision.parse(name)
    guard, approx = TABLE[name]
    top = p.a_bits + p.b_bits - 1
    assert pm.efficiency(p, sched(p, top)) == pytest.approx(guard, rel=0.02)
    assert pm.efficiency(p, sched(p, 0)) == pytest.approx(approx, rel=0.02)


def test_a2w2_power_ratio():
    g, a = default_calibration().endpoints(Precision(2, 2))
    assert g / a == pytest.approx(1.947, abs=0.02)


def test_region_split():
    pm = default_calibration()
    d = pm.domains(Precision(4, 4))
    g, a = pm.endpoints(Precision(4, 4))
    assert d["rest"] + d["region_guard"] == pytest.approx(g)
    assert d["rest"] + d["region_aprox"] == pytest.approx(a)
    assert d["region_guard"] / d["region_aprox"] == pytest.approx(pm.region_ratio)


def test_power_linear_in_fraction():
    pm = default_calibration()
    p = Precision(4, 4)
    g, a = pm.endpoints(p)
    for f in (0.0, 0.25, 0.5, 1.0):
        assert pm.power_at_fraction(p, f) == pytest.approx(g + (a - g) * f)
    powers = [pm.average_power(p, sched(p, G)) for G in range(8)]
    assert powers == sorted(powers)
    with pytest.raises(ConfigError):
        pm.power_at_fraction(p, 1.5)


def test_interpolation_and_range():
    pm = default_calibration()
    # a6w6 sits at a*b = 36, half way between a4w4 (16) and a8w8 (64) is 40
    g6, a6 = pm.endpoints(Precision(6, 6))
    (g4, a4), (g8, a8) = pm.endpoints(Precision(4, 4)), pm.endpoints(Precision(8, 8))
    t = (36 - 16) / (64 - 16)
    assert g6 == pytest.approx(g4 + t * (g8 - g4))
    assert a6 == pytest.approx(a4 + t * (a8 - a4))
    assert pm.endpoints("a8w8") == pm.endpoints(Precision(8, 8))
    with pytest.raises(ConfigError):
        pm.endpoints(Precision(2, 1))


def test_energy():
    pm = default_calibration()
    p = Precision(2, 2)
    s = sched(p, 3)
    assert pm.energy_joules(p, s, 50_000_000) == pytest.approx(pm.average_power(p, s) / 1e3)


def test_validation():
    with pytest.raises(ConfigError):
        PowerModel(50e6, ArrayShape(32, 8, 8), {Precision(2, 2): (1.0, 2.0)})
    with pytest.raises(ConfigError):
        PowerModel(50e6, ArrayShape(32, 8, 8), {}, utilization=0)


def test_json_roundtrip(tmp_path):
    pm = default_calibration()
    pm.save(tmp_path / "p.json")
    back = PowerModel.load(tmp_path / "p.json")
    assert back.table == pm.table and back.shape == pm.shape
    assert back.utilization == pm.utilization
    with pytest.raises(ConfigError):
        PowerModel.from_json({"format": "x"})

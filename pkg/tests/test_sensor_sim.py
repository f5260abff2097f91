import statistics

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rtvdc.geo import haversine_m
from rtvdc.sensor_sim import (
    AccidentKind,
    AccidentScript,
    SimConfig,
    TelemetrySample,
    TurnSignal,
    VehicleSimulator,
    detect_vcd,
    detect_vtd,
    frame_payload,
    frame_time,
    load_sim_config,
)


def sample(angle=0.0, airbag=False, **kw):
    return TelemetrySample(t=0, speed=50.0, angle=angle, airbag_deployed=airbag, lat=1.0, lon=2.0, **kw)


def test_zero_variance_speed():
    sim = VehicleSimulator(SimConfig(mu_speed=60, sigma_speed=0))
    assert all(sim.next_sample().speed == 60.0 for _ in range(500))


def test_same_seed_same_sequence():
    a = VehicleSimulator(SimConfig(seed=9))
    b = VehicleSimulator(SimConfig(seed=9))
    assert [a.next_sample() for _ in range(300)] == [b.next_sample() for _ in range(300)]
    assert [a.make_frame(40) for _ in range(20)] == [b.make_frame(40) for _ in range(20)]


def test_different_seeds_differ():
    a = VehicleSimulator(SimConfig(seed=1))
    b = VehicleSimulator(SimConfig(seed=2))
    assert [a.next_sample().speed for _ in range(10)] != [b.next_sample().speed for _ in range(10)]


def test_speed_statistics():
    sim = VehicleSimulator(SimConfig(mu_speed=60, sigma_speed=10, seed=42))
    speeds = [sim.next_sample().speed for _ in range(10_000)]
    assert abs(statistics.fmean(speeds) - 60) < 0.5
    assert abs(statistics.stdev(speeds) - 10) < 0.5


def test_speed_clamped_at_zero():
    sim = VehicleSimulator(SimConfig(mu_speed=1, sigma_speed=20, seed=3))
    speeds = [sim.next_sample().speed for _ in range(2000)]
    assert min(speeds) == 0.0


def test_samples_advance_by_period():
    sim = VehicleSimulator(SimConfig(sample_period=250), t=1000)
    assert [sim.next_sample().t for _ in range(3)] == [1250, 1500, 1750]


@pytest.mark.parametrize("angle,theta,expected", [(95, 60, True), (0, 60, False), (60, 60, False),
                                                  (-61, 60, True), (60.000001, 60, True)])
def test_detect_vtd(angle, theta, expected):
    assert detect_vtd(sample(angle), theta) is expected


def test_detect_vtd_rejects_bad_theta():
    with pytest.raises(ValueError):
        detect_vtd(sample(), 0)


def test_detect_vcd():
    assert detect_vcd(sample(airbag=True))
    assert not detect_vcd(sample(airbag=False))


def test_scripted_crash_first_detection():
    sim = VehicleSimulator(SimConfig(accident_script=AccidentScript.parse("crash@5000")))
    first = next(s for s in iter(sim.next_sample, None) if detect_vcd(s))
    assert first.t == 5000


def test_scripted_crash_off_grid():
    sim = VehicleSimulator(SimConfig(sample_period=300, accident_script=AccidentScript(AccidentKind.CRASH, 5000)))
    first = next(s for s in iter(sim.next_sample, None) if detect_vcd(s))
    assert first.t == 5100


def test_scripted_turnover_ramp():
    cfg = SimConfig(theta_crit=60, accident_script=AccidentScript.parse("turnover@10000"))
    sim = VehicleSimulator(cfg)
    samples = [sim.next_sample() for _ in range(120)]
    first = next(s for s in samples if detect_vtd(s, 60))
    # Linear ramp to 2*theta over 1000 ms crosses theta just after the midpoint.
    assert first.t == 10_600
    assert samples[-1].angle == 120.0


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32))
def test_no_false_detection_without_script(seed):
    sim = VehicleSimulator(SimConfig(seed=seed))
    for _ in range(500):
        s = sim.next_sample()
        assert not detect_vtd(s, 60) and not detect_vcd(s)


def test_noise_bound_must_sit_below_theta():
    with pytest.raises(ValueError):
        SimConfig(theta_crit=5, angle_noise_max=6)


@pytest.mark.parametrize("kw", [dict(sigma_speed=-1), dict(theta_crit=0), dict(sample_period=0), dict(route=())])
def test_invalid_config(kw):
    with pytest.raises(ValueError):
        SimConfig(**kw)


@pytest.mark.parametrize("kw", [dict(speed=-0.1), dict(angle=181), dict(lat=91), dict(lon=-181)])
def test_sample_invariants(kw):
    base = dict(t=0, speed=1.0, angle=0.0, airbag_deployed=False, lat=0.0, lon=0.0)
    base.update(kw)
    with pytest.raises(ValueError):
        TelemetrySample(**base)


def test_frames_sequence_and_size():
    sim = VehicleSimulator(SimConfig(seed=5))
    f1, f2 = sim.make_frame(12722), sim.make_frame(12722)
    assert (f1.seq, f2.seq) == (0, 1)
    assert len(f1.payload) == len(f2.payload) == 12722
    assert f1.payload != f2.payload
    assert frame_payload(5, 1, 12722) == f2.payload


def test_frame_rate_arithmetic():
    times = [frame_time(0, i, 30) for i in range(1800)]
    assert times[-1] < 60_000 and frame_time(0, 1800, 30) == 60_000
    assert 1800 * 12722 == 22_899_600


def test_frame_times_do_not_drift():
    n = 1_000_000
    assert frame_time(0, n, 30) == n * 1000 // 30
    assert all(frame_time(0, i + 1, 30) - frame_time(0, i, 30) in (33, 34) for i in range(0, 10_000))


def test_make_frame_rejects_zero_bytes():
    with pytest.raises(ValueError):
        VehicleSimulator(SimConfig()).make_frame(0)


def test_gps_follows_route_at_speed():
    cfg = SimConfig(mu_speed=36, sigma_speed=0, route=((0.0, 0.0), (0.0, 1.0)))
    sim = VehicleSimulator(cfg)
    for _ in range(100):
        s = sim.next_sample()
    # 36 km/h = 10 m/s for 10 s
    assert haversine_m(0, 0, s.lat, s.lon) == pytest.approx(100, abs=0.5)


def test_gps_stops_at_last_waypoint():
    cfg = SimConfig(mu_speed=200, sigma_speed=0, route=((0.0, 0.0), (0.0, 0.001)))
    sim = VehicleSimulator(cfg)
    for _ in range(100):
        s = sim.next_sample()
    assert s.fix == (0.0, 0.001)


def test_turn_signal_values():
    sim = VehicleSimulator(SimConfig(turn_prob=1.0, brake_prob=1.0))
    got = {sim.next_sample().turn_signal for _ in range(200)}
    assert got == {TurnSignal.LEFT, TurnSignal.RIGHT}


def test_accident_script_parse():
    s = AccidentScript.parse("turnover@420000")
    assert (s.kind, s.at) == (AccidentKind.TURNOVER, 420000)
    assert str(s) == "turnover@420000"
    for bad in ("turnover", "flip@1", "crash@x"):
        with pytest.raises(ValueError):
            AccidentScript.parse(bad)


def test_load_key_value_config(tmp_path):
    p = tmp_path / "sim.conf"
    p.write_text("# vehicle\nseed = 7\nmu_speed = 50\naccident = crash@3000\nroute = 1.0,2.0; 1.5,2.5\n")
    cfg = load_sim_config(p)
    assert cfg.seed == 7 and cfg.mu_speed == 50.0
    assert cfg.accident_script == AccidentScript(AccidentKind.CRASH, 3000)
    assert cfg.route == ((1.0, 2.0), (1.5, 2.5))


def test_load_json_config(tmp_path):
    p = tmp_path / "sim.json"
    p.write_text('{"seed": 3, "theta_crit": 45, "route": [[0, 0], [0, 1]]}')
    cfg = load_sim_config(p)
    assert cfg.theta_crit == 45.0 and cfg.route == ((0.0, 0.0), (0.0, 1.0))


def test_load_config_rejects_unknown_keys(tmp_path):
    p = tmp_path / "sim.conf"
    p.write_text("sped = 3\n")
    with pytest.raises(ValueError):
        load_sim_config(p)

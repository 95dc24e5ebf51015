import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mixedtraffic.core import (ConfigError, ControllerParams, EnergyParams, IdmParams,
                               LaneChangeParams, LeadingTrajectory, SimConfig, load_config,
                               save_config, validate_config)
from helpers import constant_trajectory


def test_default_tables():
    assert IdmParams() == IdmParams(v0=45.0, T=1.0, a=1.3, b=2.0, delta=4.0, s0=2.0, noise_std=0.3)
    assert ControllerParams() == ControllerParams(kp=2.0, kd=0.5, h_des=2.0, w=3000.0,
                                                  s_min=5.0, h_min=0.5, tau_s=5.0)
    e = EnergyParams()
    assert (e.C0, e.C1, e.C2, e.C3) == (0.14631965, 0.01217904, 0.0, 0.00002743)
    assert (e.p0, e.p1, e.p2) == (0.04553801, 0.04743683, 0.00180224)
    assert (e.q0, e.q1, e.beta, e.grade) == (0.0, 0.02609037, 0.01311175, 0.0)


def test_default_config_is_clean():
    report = validate_config(SimConfig(N=200, dt=0.1, penetration=4))
    assert len(report) == 0
    assert report.ok


def test_zero_dt_is_an_error():
    report = validate_config(SimConfig(dt=0.0))
    assert not report.ok
    assert "dt must be positive" in [i.message for i in report.errors]
    with pytest.raises(ConfigError, match="dt must be positive"):
        report.raise_for_errors()


def test_non_integral_spacing_warns():
    config = SimConfig(N=200, penetration=3)
    report = validate_config(config)
    assert report.ok
    assert [i.message for i in report.warnings] == ["100/p not integral; AV spacing rounded to 33"]
    assert config.av_spacing == 33


@pytest.mark.parametrize("changes", [
    {"N": 0}, {"penetration": -1}, {"penetration": 101},
    {"idm": IdmParams(a=0)}, {"controller": ControllerParams(h_min=2.5)},
    {"energy": EnergyParams(beta=-1)}, {"av_accel_bounds": (1.0, 2.0)},
    {"lane_change": LaneChangeParams(gap_threshold=0)},
])
def test_invariant_violations(changes):
    assert not validate_config(SimConfig(**changes)).ok


def test_unknown_config_key():
    with pytest.raises(ValueError, match="unknown config key"):
        SimConfig.from_dict({"platoon": 3})
    with pytest.raises(ValueError, match="unknown IdmParams keys"):
        SimConfig.from_dict({"idm": {"v00": 3}})


def test_partial_config_file(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"N": 20, "idm": {"noise_std": 0.0}}))
    config = load_config(path)
    assert config.N == 20 and config.idm.noise_std == 0.0 and config.idm.v0 == 45.0


configs = st.builds(
    SimConfig,
    N=st.integers(1, 500),
    dt=st.floats(0.01, 1.0),
    penetration=st.floats(0, 100),
    seed=st.integers(0, 2 ** 63 - 1),
    vehicle_length=st.floats(0, 10),
    idm=st.builds(IdmParams, v0=st.floats(1, 60), noise_std=st.floats(0, 1)),
    controller=st.builds(ControllerParams, w=st.floats(100, 10000)),
    lane_change=st.none() | st.builds(LaneChangeParams, target_count=st.integers(0, 300)),
    av_accel_bounds=st.tuples(st.floats(-5, -0.1), st.floats(0.1, 5)),
)


@settings(max_examples=200, deadline=None)
@given(configs)
def test_config_round_trip(config):
    assert SimConfig.from_json(config.to_json()) == config


def test_config_file_round_trip(tmp_path):
    config = SimConfig(N=17, penetration=5, lane_change=LaneChangeParams(gap_threshold=55))
    save_config(config, tmp_path / "c.json")
    assert load_config(tmp_path / "c.json") == config


def test_trajectory_validation():
    traj = constant_trajectory(20.0, 10.0)
    assert len(traj.validate()) == 0
    assert traj.dt == pytest.approx(0.1) and traj.duration == pytest.approx(10.0)

    bad = LeadingTrajectory(traj.time, traj.position, -traj.velocity)
    assert "velocity must be non-negative" in [i.message for i in bad.validate().errors]

    uneven = LeadingTrajectory(traj.time * 1.5, traj.position, traj.velocity)
    assert not uneven.validate().ok

    drift = LeadingTrajectory(traj.time, traj.position * 1.1, traj.velocity)
    report = drift.validate()
    assert report.ok and len(report.warnings) == 1


def test_trajectory_is_read_only():
    traj = constant_trajectory()
    with pytest.raises(ValueError):
        traj.velocity[0] = 3.0


def test_trajectory_csv_round_trip(tmp_path):
    t = 0.1 * np.arange(50)
    v = 10 + np.sin(t)
    traj = LeadingTrajectory(t, np.cumsum(v) * 0.1, v)
    traj.to_csv(tmp_path / "lead.csv")
    assert (tmp_path / "lead.csv").read_text().splitlines()[0] == "time_s,position_m,speed_mps"
    back = LeadingTrajectory.from_csv(tmp_path / "lead.csv")
    np.testing.assert_array_equal(back.position, traj.position)
    np.testing.assert_array_equal(back.velocity, traj.velocity)

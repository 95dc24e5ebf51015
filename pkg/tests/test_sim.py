import math

import numpy as np
import pytest

import oracles
from mixedtraffic.core import IdmParams, LaneChangeParams, LeadingTrajectory, SimConfig
from mixedtraffic.models import CollisionError
from mixedtraffic.scenarios import preset_trajectory
from mixedtraffic.sim import (TRAJECTORY_CSV_HEADER, NoiseStreams, apply_lane_changes,
                              init_platoon, iterate, run, step, write_trajectory_csv)
from helpers import constant_trajectory

QUIET = IdmParams(noise_std=0.0)


def equilibrium_gap(v):
    lo, hi = 2.0, 500.0
    while hi - lo > 1e-13:
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if oracles.idm(v, v, mid) < 0 else (lo, mid)
    return 0.5 * (lo + hi)


def test_initial_placement():
    state = init_platoon(constant_trajectory(20.0), SimConfig(N=3))
    np.testing.assert_allclose(state.x, [0.0, -44.5, -89.0, -133.5], rtol=0, atol=1e-12)
    np.testing.assert_array_equal(state.v, 20.0)
    assert not state.is_av.any()


def test_av_placement():
    state = init_platoon(constant_trajectory(20.0), SimConfig(N=200, penetration=4))
    assert state.ids[state.is_av].tolist() == list(range(25, 201, 25))
    assert not state.is_av[0]


def test_empty_trajectory_rejected():
    empty = LeadingTrajectory(np.empty(0), np.empty(0), np.empty(0))
    with pytest.raises(ValueError, match="empty"):
        init_platoon(empty, SimConfig(N=3))


def test_mismatched_dt_rejected():
    with pytest.raises(ValueError, match="sampled every"):
        init_platoon(constant_trajectory(20.0), SimConfig(N=3, dt=0.2))


def test_equilibrium_is_a_fixed_point():
    v = 20.0
    config = SimConfig(N=5, idm=QUIET)
    traj = constant_trajectory(v, 1000.0)
    state = init_platoon(traj, config)
    spacing = equilibrium_gap(v) + config.vehicle_length
    state.x = state.x[0] - spacing * np.arange(len(state.x))
    x0 = state.x.copy()
    step(state, config)
    np.testing.assert_allclose(state.x - x0, v * 0.1, rtol=0, atol=1e-9)
    for _ in range(9999):
        step(state, config)
    assert np.max(np.abs(state.v - v)) < 1e-6


def test_constant_leader_at_standstill():
    # at rest the placement rule falls back to the jam gap, which is an exact equilibrium
    config = SimConfig(N=4, idm=QUIET)
    result = run(constant_trajectory(0.0, 60.0), config)
    assert np.all(result.table.speed == 0.0)
    assert np.all(result.table.position == np.tile(result.table.position[:5], 601))


def test_av_stops_when_safety_speed_is_zero():
    config = SimConfig(N=1, penetration=100, idm=QUIET)
    state = init_platoon(constant_trajectory(0.0, 60.0), config)
    v = 10.0
    state.v = np.array([0.0, v])
    state.x = np.array([0.0, -17.5 - config.vehicle_length])
    limit = math.ceil(v / (3.0 * 0.1))
    for _ in range(limit):
        step(state, config)
    assert state.v[1] == 0.0


def test_collision_raises_with_dump():
    config = SimConfig(N=1, penetration=100, idm=QUIET)
    state = init_platoon(constant_trajectory(0.0, 60.0), config)
    state.v = np.array([0.0, 30.0])
    state.x = np.array([0.0, -10.0 - config.vehicle_length])
    with pytest.raises(CollisionError) as info:
        for _ in range(100):
            step(state, config)
    assert "vehicle 1" in str(info.value) and "vehicle 0" in str(info.value)
    assert info.value.dump["ids"] == [0, 1]


def test_trajectory_exhausted():
    config = SimConfig(N=1)
    state = init_platoon(constant_trajectory(10.0, 0.2), config)
    step(state, config)
    step(state, config)
    with pytest.raises(IndexError):
        step(state, config)


def test_determinism_after_many_steps():
    config = SimConfig(N=20, penetration=10, seed=42, lane_change=LaneChangeParams())
    traj = preset_trajectory("heavy", seed=1)
    traj = LeadingTrajectory(traj.time[:10001], traj.position[:10001], traj.velocity[:10001])
    a = run(traj, config)
    b = run(traj, config)
    for name in ("vehicle_id", "position", "speed", "accel"):
        assert np.array_equal(getattr(a.table, name), getattr(b.table, name))
    assert a.events == b.events
    c = run(traj, config.replace(seed=43))
    assert not np.array_equal(a.table.speed, c.table.speed)


def test_noise_streams_survive_insertion():
    plain = NoiseStreams(7, [0, 1, 2], chunk=4)
    edited = NoiseStreams(7, [0, 1, 2], chunk=4)
    rows_plain, rows_edited = [], []
    for k in range(10):
        if k == 3:
            edited.insert(2, 99)
        if k == 6:
            edited.remove(1)
        rows_plain.append(plain.draw().copy())
        rows_edited.append(edited.draw().copy())
    # vehicle 0 is never touched; vehicle 2 keeps its own sequence throughout
    for k in range(10):
        assert rows_edited[k][0] == rows_plain[k][0]
        assert rows_edited[k][-1] == rows_plain[k][2]


def lc_state(gap, speed=20.0, lc=None):
    lc = lc or LaneChangeParams(gap_threshold=40.0, insert_prob_per_s=10.0)
    config = SimConfig(N=1, idm=QUIET, lane_change=lc)
    state = init_platoon(constant_trajectory(speed), config)
    state.x = np.array([0.0, -gap - config.vehicle_length])
    state.step_index = 1
    return state, config


def test_insertion_at_gap_midpoint():
    state, config = lc_state(80.0)
    apply_lane_changes(state, config.lane_change, 0.1, config)
    assert state.ids.tolist() == [0, 2, 1]
    gaps = state.gaps(config.vehicle_length)
    np.testing.assert_allclose(gaps, [(80.0 - 4.5) / 2] * 2, rtol=1e-12)
    assert state.v[1] == state.v[0] and not state.is_av[1]
    assert "insert 2" in state.event_log[-1][1]


def test_no_insertion_below_threshold():
    state, config = lc_state(39.0)
    x = state.x.copy()
    apply_lane_changes(state, config.lane_change, 0.1, config)
    assert state.ids.tolist() == [0, 1] and np.array_equal(state.x, x) and not state.event_log


def test_insertion_skipped_when_too_tight():
    lc = LaneChangeParams(gap_threshold=5.0, insert_prob_per_s=10.0)
    state, config = lc_state(12.0, lc=lc)
    apply_lane_changes(state, config.lane_change, 0.1, config)
    assert state.ids.tolist() == [0, 1]
    assert "skipped" in state.event_log[-1][1]


def test_removal_guard_and_removal():
    lc = LaneChangeParams(gap_threshold=1e6, removal_period=30.0, target_count=3)
    config = SimConfig(N=4, penetration=50, idm=QUIET, lane_change=lc)
    state = init_platoon(constant_trajectory(20.0), config)
    state.step_index = 300
    apply_lane_changes(state, lc, 0.1, config)
    assert len(state.ids) == 4
    removed = {1, 2, 3, 4} - set(state.ids.tolist())
    assert len(removed) == 1 and removed <= {1, 3}
    assert state.is_av.sum() == 2
    apply_lane_changes(state, lc, 0.1, config)  # at target now
    assert len(state.ids) == 4


def test_order_and_bookkeeping_on_a_preset():
    config = SimConfig(N=40, penetration=10, seed=3, lane_change=LaneChangeParams())
    traj = preset_trajectory("heavy", seed=2)
    min_gap = np.inf
    for state in iterate(traj, config):
        min_gap = min(min_gap, state.gaps(config.vehicle_length).min())
    assert min_gap > 0
    result = run(traj, config)
    for vid, dist in result.metrics.vehicle_distance_m.items():
        x = result.table.series(vid, "position")
        assert np.sum(np.diff(x)) == pytest.approx(dist, rel=1e-9, abs=1e-9)


def test_string_instability_and_benefit_on_moderate():
    traj = preset_trajectory("moderate")
    base = run(traj, SimConfig(seed=0))
    lead_amp = np.ptp(traj.velocity[3000:])
    assert np.ptp(base.table.series(150)[3000:]) > lead_amp
    ctrl = run(traj, SimConfig(seed=0, penetration=4))
    assert ctrl.metrics.mpg_total > base.metrics.mpg_total


def test_trajectory_csv(tmp_path):
    config = SimConfig(N=3, penetration=50)
    result = run(constant_trajectory(20.0, 5.0), config)
    write_trajectory_csv(result.table, tmp_path / "t.csv", config, stride=10)
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == TRAJECTORY_CSV_HEADER
    assert len(lines) == 1 + 6 * 4
    leader = lines[1].split(",")
    assert leader[1] == "0" and leader[2] == "human" and leader[6] == "" and leader[7] == ""
    assert lines[3].split(",")[2] == "automated"

"""Time-stepped platoon simulation behind a replayed leading trajectory.

Randomness comes from numpy's PCG64.  Every vehicle owns a substream
seeded by ``SeedSequence(seed, spawn_key=(0, vehicle_id))`` and the
lane-change model owns ``spawn_key=(1,)``, so inserting or removing a
vehicle never shifts anybody else's noise sequence.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np

from mixedtraffic.core import (Kind, LaneChangeParams, LeadingTrajectory, SimConfig,
                               VehicleState, validate_config)
from mixedtraffic.energy import Metrics, aggregate_metrics, fuel_rate
from mixedtraffic.models import (CollisionError, MicroObservation, command_speed, idm_accel,
                                 kernel_average_speed, time_gap, track_speed)
from mixedtraffic.traffic_state import SpeedField

log = logging.getLogger(__name__)

LEADER_ID = 0


def _vehicle_stream(seed: int, vehicle_id: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(seed, spawn_key=(0, int(vehicle_id)))))


def _lane_change_stream(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(1,))))


class NoiseStreams:
    """Standard-normal draws, one per vehicle per step, in platoon order.

    Draws are buffered ``chunk`` steps at a time; rows track the platoon
    order and are inserted/deleted along with the vehicles.
    """

    def __init__(self, seed: int, ids, chunk: int = 256):
        self.seed = seed
        self.chunk = chunk
        self._gens = [_vehicle_stream(seed, i) for i in ids]
        self._buf = self._fill()
        self._col = 0

    def _fill(self):
        if not self._gens:
            return np.empty((0, self.chunk))
        return np.stack([g.standard_normal(self.chunk) for g in self._gens])

    def draw(self) -> np.ndarray:
        if self._col == self.chunk:
            self._buf = self._fill()
            self._col = 0
        out = self._buf[:, self._col]
        self._col += 1
        return out

    def insert(self, pos: int, vehicle_id: int):
        g = _vehicle_stream(self.seed, vehicle_id)
        row = np.full(self.chunk, np.nan)
        row[self._col:] = g.standard_normal(self.chunk - self._col)
        self._gens.insert(pos, g)
        self._buf = np.insert(self._buf, pos, row, axis=0)

    def remove(self, pos: int):
        del self._gens[pos]
        self._buf = np.delete(self._buf, pos, axis=0)


@dataclass
class SimState:
    """Mutable state of one run; arrays are ordered leader first."""

    step_index: int
    clock: float
    ids: np.ndarray
    is_av: np.ndarray
    x: np.ndarray
    v: np.ndarray
    a: np.ndarray
    traj: LeadingTrajectory
    field: SpeedField
    noise: NoiseStreams
    lc_rng: np.random.Generator
    next_id: int
    event_log: list[tuple[float, str]] = field(default_factory=list)

    @property
    def vehicles(self) -> list[VehicleState]:
        return [VehicleState(int(i), float(x), float(v), float(a),
                             Kind.AUTOMATED if av else Kind.HUMAN)
                for i, x, v, a, av in zip(self.ids, self.x, self.v, self.a, self.is_av)]

    def gaps(self, vehicle_length: float) -> np.ndarray:
        """Space gap of each follower (leader excluded)."""
        return self.x[:-1] - self.x[1:] - vehicle_length

    def dump(self) -> dict:
        return {"clock": self.clock, "step": self.step_index,
                "ids": self.ids.tolist(), "is_av": self.is_av.tolist(),
                "x": self.x.tolist(), "v": self.v.tolist(), "a": self.a.tolist()}


def init_platoon(traj: LeadingTrajectory, config: SimConfig,
                 field: SpeedField | None = None) -> SimState:
    """Place N followers behind the leader at 2 s gaps, all at its speed.

    Every ``100/p``-th follower (by index, 1-based) is automated.  At a
    standstill start the gap falls back to the IDM jam distance ``s0``.
    """
    if len(traj) == 0:
        raise ValueError("leading trajectory is empty")
    validate_config(config).raise_for_errors()
    if len(traj) > 1 and abs(traj.dt - config.dt) > 1e-9:
        raise ValueError(f"trajectory is sampled every {traj.dt} s but dt is {config.dt} s")
    if field is None:
        from mixedtraffic.scenarios import derive_field_from_leader
        field = derive_field_from_leader(traj)

    n = config.N
    v0 = float(traj.velocity[0])
    spacing = max(2.0 * v0, config.idm.s0) + config.vehicle_length
    idx = np.arange(n + 1)
    x = float(traj.position[0]) - spacing * idx
    is_av = np.zeros(n + 1, dtype=bool)
    if config.av_spacing is not None:
        is_av[1:] = (idx[1:] % config.av_spacing) == 0
    ids = idx.astype(np.int64)
    return SimState(
        step_index=0,
        clock=float(traj.time[0]),
        ids=ids,
        is_av=is_av,
        x=x,
        v=np.full(n + 1, v0),
        a=np.zeros(n + 1),
        traj=traj,
        field=field,
        noise=NoiseStreams(config.seed, ids),
        lc_rng=_lane_change_stream(config.seed),
        next_id=n + 1,
    )


def follower_accelerations(state: SimState, config: SimConfig) -> np.ndarray:
    """Accelerations of all followers computed from the current state."""
    if len(state.x) < 2:
        return np.empty(0)
    x, v, a = state.x, state.v, state.a
    s = x[:-1] - x[1:] - config.vehicle_length
    vf, vl = v[1:], v[:-1]
    eps = config.idm.noise_std * state.noise.draw()[1:]
    av = state.is_av[1:]
    acc = idm_accel(MicroObservation(vf, vl, s), config.idm, np.where(av, 0.0, eps))
    if av.any():
        j = np.flatnonzero(av)
        # a_l is the leader's last applied acceleration: a one-step backward difference
        obs = MicroObservation(vf[j], vl[j], s[j], a[:-1][j])
        v_avg = kernel_average_speed(state.field, x[1:][j], state.clock, config.controller.w)
        v_c = command_speed(obs, v_avg, config.controller)
        acc[j] = track_speed(vf[j], v_c, config.dt, config.av_accel_bounds)
    return acc


def step(state: SimState, config: SimConfig) -> SimState:
    """Advance one step in place and return the state.

    All accelerations come from the pre-step state, then semi-implicit
    Euler with a zero speed floor.  The leader replays its trajectory.
    """
    k = state.step_index
    traj = state.traj
    if k + 1 >= len(traj):
        raise IndexError("leading trajectory exhausted")
    dt = config.dt

    acc = np.empty(len(state.x))
    acc[0] = 0.0
    acc[1:] = follower_accelerations(state, config)

    v_new = np.maximum(0.0, state.v + acc * dt)
    x_new = state.x + v_new * dt
    v_new[0] = traj.velocity[k + 1]
    x_new[0] = traj.position[k + 1]
    a_new = (v_new - state.v) / dt

    gaps = x_new[:-1] - x_new[1:] - config.vehicle_length
    if np.any(gaps <= 0):
        bad = int(np.flatnonzero(gaps <= 0)[0])
        t = float(traj.time[k + 1])
        state.event_log.append((t, f"collision {state.ids[bad + 1]} -> {state.ids[bad]}"))
        err = CollisionError(
            f"collision at t={t:.1f}s: vehicle {state.ids[bad + 1]} reached gap "
            f"{gaps[bad]:.3f} m behind vehicle {state.ids[bad]}")
        err.dump = state.dump()
        raise err

    state.x, state.v, state.a = x_new, v_new, a_new
    state.step_index = k + 1
    state.clock = float(traj.time[k + 1])

    if config.lane_change is not None:
        apply_lane_changes(state, config.lane_change, dt, config)
    return state


def apply_lane_changes(state: SimState, params: LaneChangeParams, dt: float,
                       config: SimConfig) -> SimState:
    """Stochastic cut-ins into wide gaps and periodic cut-outs.

    An insertion is skipped if either resulting gap would fall under the
    controller's ``s_min`` or the resulting time gap of either follower
    under its ``h_min``.
    """
    L = config.vehicle_length
    ctrl = config.controller
    rng = state.lc_rng
    gaps = state.gaps(L)
    p_insert = params.insert_prob_per_s * dt
    candidates = np.flatnonzero(gaps > params.gap_threshold)
    # walk back to front so earlier indices stay valid after insertions
    draws = rng.random(len(candidates))
    for g, u in zip(candidates[::-1], draws[::-1]):
        if u >= p_insert:
            continue
        lead, follow = g, g + 1
        s = gaps[g]
        new_gap = 0.5 * (s - L)
        v_new = float(state.v[lead])
        ok = (new_gap >= ctrl.s_min
              and time_gap(new_gap, v_new) >= ctrl.h_min
              and time_gap(new_gap, state.v[follow]) >= ctrl.h_min)
        if not ok:
            state.event_log.append((state.clock, f"insertion skipped in gap {state.ids[lead]}"
                                                 f"-{state.ids[follow]}"))
            continue
        vid = state.next_id
        state.next_id += 1
        pos = follow
        state.ids = np.insert(state.ids, pos, vid)
        state.is_av = np.insert(state.is_av, pos, False)
        state.x = np.insert(state.x, pos, state.x[lead] - L - new_gap)
        state.v = np.insert(state.v, pos, v_new)
        state.a = np.insert(state.a, pos, 0.0)
        state.noise.insert(pos, vid)
        state.event_log.append((state.clock, f"insert {vid} between {state.ids[lead]} "
                                             f"and {state.ids[pos + 1]}"))

    period_steps = max(1, int(round(params.removal_period / dt)))
    target = params.target_count or config.N
    if state.step_index % period_steps == 0 and len(state.ids) - 1 > target:
        humans = np.flatnonzero(~state.is_av[1:]) + 1
        if len(humans):
            pos = int(humans[rng.integers(len(humans))])
            vid = int(state.ids[pos])
            for name in ("ids", "is_av", "x", "v", "a"):
                setattr(state, name, np.delete(getattr(state, name), pos))
            state.noise.remove(pos)
            state.event_log.append((state.clock, f"remove {vid}"))
    return state


@dataclass
class TrajectoryTable:
    """Long-format per-vehicle samples, time-ordered, leader first per step."""

    step: np.ndarray
    time: np.ndarray
    vehicle_id: np.ndarray
    is_av: np.ndarray
    position: np.ndarray
    speed: np.ndarray
    accel: np.ndarray
    gap: np.ndarray

    @property
    def is_leader(self) -> np.ndarray:
        return self.vehicle_id == LEADER_ID

    @property
    def time_gap(self) -> np.ndarray:
        return time_gap(self.gap, self.speed)

    def series(self, vehicle_id: int, column: str = "speed") -> np.ndarray:
        return getattr(self, column)[self.vehicle_id == vehicle_id]

    def __len__(self):
        return len(self.vehicle_id)


class _Recorder:
    def __init__(self, vehicle_length):
        self.L = vehicle_length
        self.chunks = []

    def record(self, state: SimState):
        gap = np.empty(len(state.x))
        gap[0] = np.nan
        gap[1:] = state.x[:-1] - state.x[1:] - self.L
        self.chunks.append((state.step_index, state.clock, state.ids, state.is_av,
                            state.x, state.v, state.a, gap))

    def table(self) -> TrajectoryTable:
        sizes = [len(c[2]) for c in self.chunks]
        return TrajectoryTable(
            step=np.repeat([c[0] for c in self.chunks], sizes).astype(np.int64),
            time=np.repeat([c[1] for c in self.chunks], sizes),
            vehicle_id=np.concatenate([c[2] for c in self.chunks]),
            is_av=np.concatenate([c[3] for c in self.chunks]),
            position=np.concatenate([c[4] for c in self.chunks]),
            speed=np.concatenate([c[5] for c in self.chunks]),
            accel=np.concatenate([c[6] for c in self.chunks]),
            gap=np.concatenate([c[7] for c in self.chunks]),
        )


def trajectory_digest(traj: LeadingTrajectory) -> str:
    h = hashlib.sha256()
    for arr in (traj.time, traj.position, traj.velocity):
        h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return h.hexdigest()[:16]


@dataclass
class RunResult:
    config: SimConfig
    identity: dict
    table: TrajectoryTable
    metrics: Metrics
    av_ids: list[int]
    events: list[tuple[float, str]]

    def summary(self) -> dict:
        m = self.metrics
        return {
            "identity": self.identity,
            "distance_km": m.distance_km,
            "mpg_avs": m.mpg_avs,
            "mpg_total": m.mpg_total,
            "n_events": len(self.events),
        }

    def to_csv(self, path, stride: int = 10) -> None:
        """Per-vehicle rows every ``stride`` steps."""
        write_trajectory_csv(self.table, path, self.config, stride)


def iterate(traj: LeadingTrajectory, config: SimConfig, field: SpeedField | None = None):
    """Yield the state at t0 and after every step until the trajectory ends.

    The same object is yielded each time; copy what must outlive a step.
    """
    report = validate_config(config)
    for w in report.warnings:
        log.warning("%s", w.message)
    report.raise_for_errors()
    state = init_platoon(traj, config, field)
    yield state
    for _ in range(len(traj) - 1):
        yield step(state, config)


def run(traj: LeadingTrajectory, config: SimConfig, field: SpeedField | None = None,
        scenario: str = "") -> RunResult:
    """Simulate until the leading trajectory runs out."""
    rec = _Recorder(config.vehicle_length)
    initial_av = None
    for state in iterate(traj, config, field):
        if initial_av is None:
            initial_av = state.ids[state.is_av].tolist()
        rec.record(state)
    table = rec.table()
    metrics = aggregate_metrics(table, config.energy, config.dt)
    identity = {"scenario": scenario, "trajectory": trajectory_digest(traj), "N": config.N,
                "seed": config.seed, "penetration": config.penetration,
                "lane_changes": config.lane_change is not None}
    return RunResult(config, identity, table, metrics, [int(i) for i in initial_av],
                     state.event_log)


TRAJECTORY_CSV_HEADER = ("time_s,vehicle_id,kind,position_m,speed_mps,accel_mps2,"
                         "gap_m,time_gap_s,fuel_rate")


def write_trajectory_csv(table: TrajectoryTable, path, config: SimConfig, stride: int = 10):
    keep = (table.step % stride) == 0
    rate = fuel_rate(table.speed[keep], table.accel[keep], config.energy)
    tg = table.time_gap[keep]
    kinds = np.where(table.is_av[keep], Kind.AUTOMATED.value, Kind.HUMAN.value)
    cols = [table.time[keep], table.vehicle_id[keep], kinds, table.position[keep],
            table.speed[keep], table.accel[keep], table.gap[keep], tg, rate]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(TRAJECTORY_CSV_HEADER + "\n")
        for t, vid, kind, x, v, a, g, h, f in zip(*cols):
            gap_txt = "" if np.isnan(g) else f"{g:.3f}"
            tg_txt = "" if np.isnan(g) else f"{h:.3f}"
            fh.write(f"{t:.1f},{vid},{kind},{x:.3f},{v:.3f},{a:.3f},{gap_txt},{tg_txt},{f:.5f}\n")

"""Synthetic leading trajectories, leader-derived speed fields and scenarios.

The "moderate" and "heavy" presets are qualitative stand-ins for recorded
highway drives: one alternates between free flow and slow traffic, the
other stays slow with repeated full stops.  They are not reconstructions
of any particular recording.
"""
from __future__ import annotations

import json
import math
import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from mixedtraffic.core import TRAJECTORY_DT, LeadingTrajectory, SimConfig
from mixedtraffic.traffic_state import LINEAR, SpeedField

STOP_RAMP = 1.5  # m/s2, deceleration into and acceleration out of a stop
HALF_MILE = 804.672


@dataclass(frozen=True)
class TrajectorySpec:
    """Recipe for a synthetic leader.

    Speed is ``base_speed`` plus one sinusoid per ``(amplitude, period)``
    pair, each with a seeded random phase.  Each ``(time, hold)`` stop
    event caps the speed by a V-shaped envelope that reaches zero at
    ``time``, stays there for ``hold`` seconds and ramps back at
    ``STOP_RAMP``.
    """

    duration: float
    base_speed: float
    oscillation: tuple[tuple[float, float], ...] = ()
    stop_events: tuple[tuple[float, float], ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {"duration": self.duration, "base_speed": self.base_speed,
                "oscillation": [list(o) for o in self.oscillation],
                "stop_events": [list(s) for s in self.stop_events]}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TrajectorySpec":
        return cls(duration=float(d["duration"]), base_speed=float(d["base_speed"]),
                   oscillation=tuple((float(a), float(p)) for a, p in d.get("oscillation", ())),
                   stop_events=tuple((float(t), float(h)) for t, h in d.get("stop_events", ())))


PRESETS: dict[str, TrajectorySpec] = {
    "moderate": TrajectorySpec(
        duration=1200.0, base_speed=22.0,
        oscillation=((4.0, 240.0), (3.0, 40.0)),
    ),
    "heavy": TrajectorySpec(
        duration=1200.0, base_speed=9.0,
        oscillation=((4.0, 150.0), (2.0, 50.0)),
        stop_events=((200.0, 10.0), (560.0, 15.0), (930.0, 10.0)),
    ),
}


def generate_synthetic_trajectory(spec: TrajectorySpec, seed: int = 0,
                                  dt: float = TRAJECTORY_DT) -> LeadingTrajectory:
    if spec.duration <= 0:
        raise ValueError("duration must be positive")
    if spec.base_speed - sum(abs(a) for a, _ in spec.oscillation) < 0:
        raise ValueError("oscillation amplitudes exceed the base speed; speed would go negative")
    for amp, period in spec.oscillation:
        if period <= 0:
            raise ValueError("oscillation periods must be positive")
    for t_stop, hold in spec.stop_events:
        if hold < 0:
            raise ValueError("stop hold durations must be non-negative")

    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(2,))))
    phases = rng.uniform(0.0, 2.0 * math.pi, size=len(spec.oscillation))

    n = int(round(spec.duration / dt)) + 1
    t = dt * np.arange(n)
    v = np.full(n, float(spec.base_speed))
    for (amp, period), phase in zip(spec.oscillation, phases):
        v += amp * np.sin(2.0 * math.pi * t / period + phase)
    for t_stop, hold in spec.stop_events:
        envelope = np.where(t < t_stop, STOP_RAMP * (t_stop - t),
                            np.where(t <= t_stop + hold, 0.0, STOP_RAMP * (t - t_stop - hold)))
        v = np.minimum(v, envelope)
    v = np.maximum(v, 0.0)

    x = np.concatenate([[0.0], np.cumsum(0.5 * (v[1:] + v[:-1]) * dt)])
    return LeadingTrajectory(t, x, v)


def preset_trajectory(name: str, seed: int = 0) -> LeadingTrajectory:
    try:
        spec = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return generate_synthetic_trajectory(spec, seed)


def derive_field_from_leader(traj: LeadingTrajectory, segment_length: float = HALF_MILE,
                             update_period: float = 60.0,
                             extent: tuple[float, float] | None = None,
                             interpolation: str = LINEAR) -> SpeedField:
    """Segment/minute mean speeds of the leader itself.

    Each cell holds the mean leader speed over the samples taken while
    the leader was inside that segment during that update period.  Cells
    of a visited segment that the leader was not in are filled from the
    nearest visited period (earlier wins a tie); segments never visited,
    possible when ``extent`` reaches past the drive, copy the nearest
    visited segment.  Imputed cells are flagged in ``field.filled``.
    """
    if not segment_length > 0:
        raise ValueError("segment_length must be positive")
    if not update_period > 0:
        raise ValueError("update_period must be positive")
    if len(traj) == 0:
        raise ValueError("trajectory is empty")
    x0, x1 = (traj.position[0], traj.position[-1]) if extent is None else extent
    n_seg = max(1, int(math.ceil((x1 - x0) / segment_length - 1e-9)))
    edges = x0 + segment_length * np.arange(n_seg + 1)
    t0 = traj.time[0]
    n_per = max(1, int(math.floor((traj.time[-1] - t0) / update_period + 1e-9)) + 1)
    times = t0 + update_period * np.arange(n_per)

    seg = np.clip(np.floor((traj.position - x0) / segment_length).astype(int), 0, n_seg - 1)
    inside = (traj.position >= x0) & (traj.position <= edges[-1])
    per = np.clip(np.floor((traj.time - t0) / update_period + 1e-9).astype(int), 0, n_per - 1)
    sums = np.zeros((n_per, n_seg))
    counts = np.zeros((n_per, n_seg))
    np.add.at(sums, (per[inside], seg[inside]), traj.velocity[inside])
    np.add.at(counts, (per[inside], seg[inside]), 1)
    measured = counts > 0
    speeds = np.where(measured, sums / np.maximum(counts, 1), np.nan)

    visited = measured.any(axis=0)
    if not visited.any():
        raise ValueError("trajectory never enters the field extent")
    for j in np.flatnonzero(visited):
        rows = np.flatnonzero(measured[:, j])
        for k in np.flatnonzero(~measured[:, j]):
            speeds[k, j] = speeds[rows[np.argmin(np.abs(rows - k))], j]
    vis_idx = np.flatnonzero(visited)
    for j in np.flatnonzero(~visited):
        speeds[:, j] = speeds[:, vis_idx[np.argmin(np.abs(vis_idx - j))]]
    return SpeedField(edges, times, speeds, interpolation, filled=~measured)


@dataclass
class Scenario:
    """A named experiment: one leader source, one field source, config overrides.

    ``trajectory`` is a CSV path, a preset name or an inline
    :class:`TrajectorySpec` mapping; ``field`` is a segment CSV path or
    ``"derive-from-leader"``.
    """

    name: str
    trajectory: str | dict[str, Any]
    field: str = "derive-from-leader"
    overrides: dict[str, Any] = dataclasses.field(default_factory=dict)
    trajectory_seed: int = 0
    field_offset: tuple[float, float] = (0.0, 0.0)
    base_dir: Path = Path(".")

    def validate(self):
        if not self.name:
            raise ValueError("scenario needs a name")
        if not self.trajectory:
            raise ValueError("scenario needs exactly one trajectory source")
        if not self.field:
            raise ValueError("scenario needs exactly one field source")

    def load_trajectory(self) -> LeadingTrajectory:
        src = self.trajectory
        if isinstance(src, dict):
            return generate_synthetic_trajectory(TrajectorySpec.from_dict(src), self.trajectory_seed)
        if src in PRESETS:
            return preset_trajectory(src, self.trajectory_seed)
        traj = LeadingTrajectory.from_csv(self.base_dir / src)
        report = traj.validate()
        if not report.ok:
            raise ValueError(f"invalid trajectory {src}: " + "; ".join(i.message for i in report.errors))
        return traj

    def load_field(self, traj: LeadingTrajectory, config: SimConfig) -> SpeedField:
        from mixedtraffic.traffic_state import ingest_segments, read_segments_csv

        if self.field == "derive-from-leader":
            return derive_field_from_leader(traj).shifted(*self.field_offset)
        return ingest_segments(read_segments_csv(self.base_dir / self.field),
                               offset=self.field_offset)

    def config(self, base: SimConfig) -> SimConfig:
        if not self.overrides:
            return base
        merged = base.to_dict()
        for key, value in self.overrides.items():
            if isinstance(value, dict) and isinstance(merged.get(key), dict):
                merged[key] = {**merged[key], **value}
            else:
                merged[key] = value
        return SimConfig.from_dict(merged)

    @classmethod
    def from_dict(cls, d: dict[str, Any], base_dir: Path = Path(".")) -> "Scenario":
        known = {"name", "trajectory", "field", "overrides", "trajectory_seed", "field_offset"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
        sc = cls(name=d["name"], trajectory=d["trajectory"],
                 field=d.get("field", "derive-from-leader"),
                 overrides=d.get("overrides", {}),
                 trajectory_seed=int(d.get("trajectory_seed", 0)),
                 field_offset=tuple(d.get("field_offset", (0.0, 0.0))),
                 base_dir=base_dir)
        sc.validate()
        return sc

    @classmethod
    def load(cls, spec: str) -> "Scenario":
        """A preset name or a path to a JSON scenario file."""
        if spec in PRESETS:
            return cls(name=spec, trajectory=spec)
        path = Path(spec)
        return cls.from_dict(json.loads(path.read_text(encoding="utf-8")), base_dir=path.parent)

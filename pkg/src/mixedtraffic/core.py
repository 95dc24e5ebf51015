"""Shared domain types, parameter tables and config validation."""
from __future__ import annotations

import dataclasses
import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

# Trajectories are sampled and simulated at this step unless overridden.
TRAJECTORY_DT = 0.1


class Kind(enum.Enum):
    HUMAN = "human"
    AUTOMATED = "automated"


@dataclass(frozen=True)
class VehicleState:
    """Kinematic state of one vehicle.

    ``position`` is the front bumper, increasing downstream.
    """

    id: int
    position: float
    velocity: float
    acceleration: float = 0.0
    kind: Kind = Kind.HUMAN


@dataclass(frozen=True)
class IdmParams:
    """Intelligent Driver Model parameters.

    Attributes
    ----------
    v0 : float
        desirable velocity, in m/s
    T : float
        safe time headway, in s
    a : float
        max acceleration, in m/s2
    b : float
        comfortable deceleration, in m/s2
    delta : float
        acceleration exponent
    s0 : float
        linear jam distance, in m
    noise_std : float
        standard deviation of the additive acceleration noise, in m/s2
    """

    v0: float = 45.0
    T: float = 1.0
    a: float = 1.3
    b: float = 2.0
    delta: float = 4.0
    s0: float = 2.0
    noise_std: float = 0.3


@dataclass(frozen=True)
class ControllerParams:
    """Gains and safety limits of the two-layer AV controller.

    Attributes
    ----------
    kp : float
        proportional gain on the time-gap error
    kd : float
        gain on the speed difference to the leader
    h_des : float
        desired time gap, in s
    w : float
        width of the downstream averaging window, in m
    s_min : float
        minimum safe space gap, in m
    h_min : float
        minimum safe time gap, in s
    tau_s : float
        horizon of the safety filter, in s
    """

    kp: float = 2.0
    kd: float = 0.5
    h_des: float = 2.0
    w: float = 3000.0
    s_min: float = 5.0
    h_min: float = 0.5
    tau_s: float = 5.0


@dataclass(frozen=True)
class EnergyParams:
    """Fitted polynomial fuel model (road grade fixed at zero).

    ``grams_per_gallon`` converts the fuel mass rate (g/s) into volume
    for MPG reporting: 737 g/L gasoline times 3.78541 L/gal.
    """

    C0: float = 0.14631965
    C1: float = 0.01217904
    C2: float = 0.0
    C3: float = 0.00002743
    p0: float = 0.04553801
    p1: float = 0.04743683
    p2: float = 0.00180224
    q0: float = 0.0
    q1: float = 0.02609037
    beta: float = 0.01311175
    grade: float = 0.0
    grams_per_gallon: float = 737.0 * 3.78541


@dataclass(frozen=True)
class LaneChangeParams:
    """Stochastic cut-in / cut-out perturbation model.

    Vehicles are inserted into gaps wider than ``gap_threshold`` with
    rate ``insert_prob_per_s``; every ``removal_period`` seconds one
    human follower is removed while the platoon exceeds ``target_count``.
    A ``target_count`` of 0 means "use the platoon size N".
    """

    gap_threshold: float = 40.0
    insert_prob_per_s: float = 0.05
    removal_period: float = 30.0
    target_count: int = 0


@dataclass(frozen=True)
class SimConfig:
    N: int = 200
    dt: float = TRAJECTORY_DT
    penetration: float = 0.0
    seed: int = 0
    vehicle_length: float = 4.5
    controller: ControllerParams = field(default_factory=ControllerParams)
    idm: IdmParams = field(default_factory=IdmParams)
    energy: EnergyParams = field(default_factory=EnergyParams)
    lane_change: LaneChangeParams | None = None
    av_accel_bounds: tuple[float, float] = (-3.0, 1.5)

    @property
    def av_spacing(self) -> int | None:
        """Follower-index spacing between AVs, or None without AVs."""
        if self.penetration <= 0:
            return None
        return max(1, int(round(100.0 / self.penetration)))

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["av_accel_bounds"] = list(self.av_accel_bounds)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SimConfig":
        """Build a config from a (possibly partial) mapping.

        Unknown keys raise ``ValueError`` so typos do not pass silently.
        """
        d = dict(d)
        nested = {
            "controller": ControllerParams,
            "idm": IdmParams,
            "energy": EnergyParams,
            "lane_change": LaneChangeParams,
        }
        kwargs: dict[str, Any] = {}
        names = {f.name for f in dataclasses.fields(cls)}
        for key, value in d.items():
            if key not in names:
                raise ValueError(f"unknown config key {key!r}")
            if key in nested:
                if value is None:
                    kwargs[key] = None
                else:
                    kwargs[key] = _build(nested[key], value)
            elif key == "av_accel_bounds":
                lo, hi = value
                kwargs[key] = (float(lo), float(hi))
            else:
                kwargs[key] = value
        return cls(**kwargs)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SimConfig":
        return cls.from_dict(json.loads(text))


def _build(klass, value):
    if isinstance(value, klass):
        return value
    names = {f.name for f in dataclasses.fields(klass)}
    unknown = set(value) - names
    if unknown:
        raise ValueError(f"unknown {klass.__name__} keys: {sorted(unknown)}")
    return klass(**value)


def load_config(path: str | Path) -> SimConfig:
    return SimConfig.from_json(Path(path).read_text(encoding="utf-8"))


def save_config(config: SimConfig, path: str | Path) -> None:
    Path(path).write_text(config.to_json() + "\n", encoding="utf-8")


@dataclass(frozen=True)
class Issue:
    severity: str  # "error" or "warning"
    message: str

    def __str__(self):
        return f"{self.severity}: {self.message}"


@dataclass
class ValidationReport:
    issues: list[Issue] = field(default_factory=list)

    @property
    def errors(self) -> list[Issue]:
        return [i for i in self.issues if i.severity == "error"]

    @property
    def warnings(self) -> list[Issue]:
        return [i for i in self.issues if i.severity == "warning"]

    @property
    def ok(self) -> bool:
        return not self.errors

    def __len__(self):
        return len(self.issues)

    def __iter__(self):
        return iter(self.issues)

    def raise_for_errors(self):
        if self.errors:
            raise ConfigError("; ".join(i.message for i in self.errors))


class ConfigError(ValueError):
    pass


def validate_config(config: SimConfig) -> ValidationReport:
    """Check a config against its invariants without raising."""
    report = ValidationReport()

    def err(msg):
        report.issues.append(Issue("error", msg))

    if config.N < 1:
        err("N must be at least 1")
    if not config.dt > 0:
        err("dt must be positive")
    if not 0 <= config.penetration <= 100:
        err("penetration must be within [0, 100]")
    elif config.penetration > 0:
        exact = 100.0 / config.penetration
        spacing = config.av_spacing
        if not math.isclose(exact, round(exact), rel_tol=0, abs_tol=1e-9):
            report.issues.append(Issue(
                "warning",
                f"100/p not integral; AV spacing rounded to {spacing}"))
        if spacing > config.N:
            report.issues.append(Issue(
                "warning", f"AV spacing {spacing} exceeds N; no AVs placed"))
    if not config.vehicle_length >= 0:
        err("vehicle_length must be non-negative")

    idm = config.idm
    for name in ("v0", "T", "a", "b", "s0"):
        if not getattr(idm, name) > 0:
            err(f"idm.{name} must be positive")
    if not idm.noise_std >= 0:
        err("idm.noise_std must be non-negative")

    ctrl = config.controller
    for f in dataclasses.fields(ctrl):
        if not getattr(ctrl, f.name) > 0:
            err(f"controller.{f.name} must be positive")
    if not ctrl.h_min < ctrl.h_des:
        err("controller.h_min must be below controller.h_des")

    if not config.energy.beta >= 0:
        err("energy.beta must be non-negative")
    if config.energy.grade != 0:
        err("energy.grade must be 0 (graded roads are not modelled)")
    if not config.energy.grams_per_gallon > 0:
        err("energy.grams_per_gallon must be positive")

    lo, hi = config.av_accel_bounds
    if not lo < 0 < hi:
        err("av_accel_bounds must satisfy a_min < 0 < a_max")

    lc = config.lane_change
    if lc is not None:
        for name in ("gap_threshold", "insert_prob_per_s", "removal_period"):
            if not getattr(lc, name) > 0:
                err(f"lane_change.{name} must be positive")
        if lc.target_count < 0:
            err("lane_change.target_count must be non-negative")
    return report


@dataclass(frozen=True)
class LeadingTrajectory:
    """Exogenous time series replayed by the platoon leader."""

    time: np.ndarray
    position: np.ndarray
    velocity: np.ndarray

    def __post_init__(self):
        for name in ("time", "position", "velocity"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not (len(self.time) == len(self.position) == len(self.velocity)):
            raise ValueError("trajectory columns differ in length")

    def __len__(self):
        return len(self.time)

    @property
    def dt(self) -> float:
        if len(self.time) < 2:
            return TRAJECTORY_DT
        return float(self.time[1] - self.time[0])

    @property
    def duration(self) -> float:
        return float(self.time[-1] - self.time[0]) if len(self) else 0.0

    def validate(self, dt: float = TRAJECTORY_DT) -> ValidationReport:
        """Errors for hard invariant breaks, a warning for integration drift."""
        report = ValidationReport()
        if len(self) == 0:
            report.issues.append(Issue("error", "trajectory is empty"))
            return report
        steps = np.diff(self.time)
        if np.any(steps <= 0):
            report.issues.append(Issue("error", "times must be strictly increasing"))
        elif not np.allclose(steps, dt, rtol=0, atol=1e-6):
            report.issues.append(Issue("error", f"times must be spaced by {dt} s"))
        if np.any(np.diff(self.position) < 0):
            report.issues.append(Issue("error", "position must be non-decreasing"))
        if np.any(self.velocity < 0):
            report.issues.append(Issue("error", "velocity must be non-negative"))
        if len(self) > 1 and report.ok:
            integrated = self.position[0] + np.concatenate(
                [[0.0], np.cumsum(0.5 * (self.velocity[1:] + self.velocity[:-1]) * steps)])
            drift = np.abs(integrated - self.position)
            allowed = 1.0 * np.maximum(self.time - self.time[0], 60.0) / 60.0
            if np.any(drift > allowed):
                report.issues.append(Issue(
                    "warning",
                    f"position drifts up to {drift.max():.2f} m from integrated velocity"))
        return report

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("time_s,position_m,speed_mps\n")
            for t, x, v in zip(self.time, self.position, self.velocity):
                fh.write(f"{float(t)!r},{float(x)!r},{float(v)!r}\n")

    @classmethod
    def from_csv(cls, path: str | Path) -> "LeadingTrajectory":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if data.size == 0:
            return cls(np.empty(0), np.empty(0), np.empty(0))
        return cls(data[:, 0], data[:, 1], data[:, 2])

"""Segment-aggregated speed fields, ping fusion and target speed profiles."""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from mixedtraffic.models import kernel_average_speed

LINEAR = "linear"  # piecewise-linear between segment midpoints
STEP = "step"  # piecewise-constant over each segment

DEFAULT_TAU_AGE = 60.0
DEFAULT_MAX_AGE = 120.0
DEFAULT_PROFILE_DX = 10.0

SEGMENT_HEADER = ["segment_start_m", "segment_end_m", "timestamp_s", "speed_mps"]
PING_HEADER = ["vehicle_id", "timestamp_s", "position_m", "speed_mps"]
PROFILE_HEADER = ["position_m", "target_speed_mps"]


class NoTrafficStateError(ValueError):
    pass


@dataclass(frozen=True)
class SegmentRecord:
    segment_start: float
    segment_end: float
    timestamp: float
    mean_speed: float

    def validate(self):
        if not self.segment_end > self.segment_start:
            raise ValueError(f"segment end must exceed start: {self}")
        if not self.mean_speed >= 0:
            raise ValueError(f"mean speed must be non-negative: {self}")


@dataclass(frozen=True)
class VehiclePing:
    vehicle_id: int
    timestamp: float
    position: float
    speed: float


class SpeedField:
    """Segment mean speeds over time.

    ``speeds[k, j]`` is the mean speed of segment ``j`` valid from
    ``times[k]`` until the next update.  NaN marks a segment with no data
    yet.  ``filled`` flags cells that were imputed rather than measured.
    Instances are treated as immutable; fusion returns a new field.
    """

    def __init__(self, edges, times, speeds, interpolation=LINEAR, filled=None):
        self.edges = np.asarray(edges, dtype=float)
        self.times = np.asarray(times, dtype=float)
        self.speeds = np.asarray(speeds, dtype=float).reshape(len(self.times), max(len(self.edges) - 1, 0))
        if interpolation not in (LINEAR, STEP):
            raise ValueError(f"unknown interpolation {interpolation!r}")
        self.interpolation = interpolation
        if filled is None:
            filled = np.zeros(self.speeds.shape, dtype=bool)
        self.filled = np.asarray(filled, dtype=bool)
        for arr in (self.edges, self.times, self.speeds, self.filled):
            arr.setflags(write=False)
        if len(self.edges) >= 2 and np.any(np.diff(self.edges) <= 0):
            raise ValueError("segment edges must be strictly increasing")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        self._antiderivatives: dict[int, _Antiderivative] = {}

    @property
    def n_segments(self) -> int:
        return len(self.edges) - 1

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def empty(self) -> bool:
        return self.n_segments < 1 or len(self.times) == 0

    def with_interpolation(self, interpolation: str) -> "SpeedField":
        return SpeedField(self.edges, self.times, self.speeds, interpolation, self.filled)

    def row_index(self, t: float) -> int:
        if self.empty:
            raise NoTrafficStateError("no traffic state available")
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        if k < 0:
            raise NoTrafficStateError(f"no data yet at t={t}")
        return k

    def snapshot(self, t: float) -> np.ndarray:
        """Segment speeds in effect at time ``t``."""
        row = self.speeds[self.row_index(t)]
        if np.any(np.isnan(row)):
            raise NoTrafficStateError(f"no data yet for some segments at t={t}")
        return row

    def antiderivative(self, t: float) -> "_Antiderivative":
        k = self.row_index(t)
        F = self._antiderivatives.get(k)
        if F is None:
            F = _Antiderivative(self.edges, self.snapshot(t), self.interpolation)
            self._antiderivatives[k] = F
        return F

    def shifted(self, dx: float = 0.0, dt: float = 0.0) -> "SpeedField":
        if dx == 0.0 and dt == 0.0:
            return self
        return SpeedField(self.edges + dx, self.times + dt, self.speeds,
                          self.interpolation, self.filled)

    def to_records(self) -> list[SegmentRecord]:
        out = []
        for k, t in enumerate(self.times):
            for j in range(self.n_segments):
                v = self.speeds[k, j]
                if not math.isnan(v):
                    out.append(SegmentRecord(float(self.edges[j]), float(self.edges[j + 1]),
                                             float(t), float(v)))
        return out

    def __eq__(self, other):
        if not isinstance(other, SpeedField):
            return NotImplemented
        return (self.interpolation == other.interpolation
                and np.array_equal(self.edges, other.edges)
                and np.array_equal(self.times, other.times)
                and np.array_equal(self.speeds, other.speeds, equal_nan=True))

    def __repr__(self):
        return (f"SpeedField({self.n_segments} segments, {len(self.times)} updates, "
                f"{self.interpolation})")


class _Antiderivative:
    """Closed-form integral of the interpolated speed profile.

    ``F(x)`` is the integral from the first node to ``x``; speeds are held
    constant beyond the outermost nodes.
    """

    def __init__(self, edges, speeds, interpolation):
        if interpolation == STEP:
            nodes = np.asarray(edges, dtype=float)
            self._step = True
            self._values = np.asarray(speeds, dtype=float)
            widths = np.diff(nodes)
            self._cum = np.concatenate([[0.0], np.cumsum(self._values * widths)])
        else:
            nodes = 0.5 * (edges[1:] + edges[:-1])
            self._step = False
            self._values = np.asarray(speeds, dtype=float)
            widths = np.diff(nodes)
            self._slopes = np.diff(self._values) / widths if len(nodes) > 1 else np.empty(0)
            trap = 0.5 * (self._values[1:] + self._values[:-1]) * widths
            self._cum = np.concatenate([[0.0], np.cumsum(trap)])
        self._nodes = nodes

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        nodes, vals, cum = self._nodes, self._values, self._cum
        # clamp into the node range, then add the constant-speed tails
        lo, hi = nodes[0], nodes[-1]
        xc = np.minimum(np.maximum(x, lo), hi)
        tail = vals[0] * np.minimum(x - lo, 0.0) + vals[-1] * np.maximum(x - hi, 0.0)
        if self._step:
            j = np.minimum(np.searchsorted(nodes, xc, side="right") - 1, len(vals) - 1)
            return cum[j] + vals[j] * (xc - nodes[j]) + tail
        if len(nodes) == 1:
            return tail
        j = np.minimum(np.searchsorted(nodes, xc, side="right") - 1, len(nodes) - 2)
        dxj = xc - nodes[j]
        return cum[j] + vals[j] * dxj + 0.5 * self._slopes[j] * dxj * dxj + tail


def ingest_segments(records: Iterable[SegmentRecord], offset: tuple[float, float] = (0.0, 0.0),
                    interpolation: str = LINEAR) -> SpeedField:
    """Build a field from segment records.

    Segments must tile their union without gaps or partial overlaps.  A
    repeated (segment, timestamp) keeps the last record and warns.
    ``offset`` shifts the data by (dx, dt) to align it with a trajectory.
    """
    records = list(records)
    for r in records:
        r.validate()
    geoms = sorted({(float(r.segment_start), float(r.segment_end)) for r in records})
    problems = []
    gaps = []
    for (a0, a1), (b0, b1) in zip(geoms, geoms[1:]):
        if b0 < a1:
            problems.append(f"[{a0}, {a1}] overlaps [{b0}, {b1}]")
        elif b0 > a1:
            gaps.append(f"[{a1}, {b0}]")
    if problems:
        raise ValueError("overlapping segments: " + "; ".join(problems))
    if gaps:
        raise ValueError("gaps between segments: missing " + ", ".join(gaps))

    edges = [g[0] for g in geoms] + [geoms[-1][1]] if geoms else []
    seg_index = {g: j for j, g in enumerate(geoms)}
    times = sorted({r.timestamp for r in records})
    t_index = {t: k for k, t in enumerate(times)}
    speeds = np.full((len(times), len(geoms)), np.nan)
    seen = set()
    for r in records:
        key = (seg_index[(float(r.segment_start), float(r.segment_end))], t_index[r.timestamp])
        if key in seen and speeds[key[1], key[0]] != r.mean_speed:
            warnings.warn(f"duplicate record for segment [{r.segment_start}, {r.segment_end}] "
                          f"at t={r.timestamp}; keeping the last one", stacklevel=2)
        seen.add(key)
        speeds[key[1], key[0]] = r.mean_speed
    # an update only reports some segments; the rest keep their last value
    filled = np.zeros(speeds.shape, dtype=bool)
    for k in range(1, len(times)):
        missing = np.isnan(speeds[k]) & ~np.isnan(speeds[k - 1])
        speeds[k, missing] = speeds[k - 1, missing]
        filled[k, missing] = True
    field = SpeedField(edges, times, speeds, interpolation, filled)
    return field.shifted(*offset)


def speed_at(field: SpeedField, x, t: float):
    """Interpolated speed at position(s) ``x`` using the latest update <= t."""
    row = field.snapshot(t)
    x = np.asarray(x, dtype=float)
    if field.interpolation == STEP:
        j = np.clip(np.searchsorted(field.edges, x, side="right") - 1, 0, field.n_segments - 1)
        out = row[j]
    else:
        out = np.interp(x, field.midpoints, row)
    return out if np.ndim(out) else float(out)


def fuse_pings(field: SpeedField, pings: Sequence[VehiclePing], t: float,
               tau_age: float = DEFAULT_TAU_AGE, max_age: float = DEFAULT_MAX_AGE) -> SpeedField:
    """Blend fresh probe-vehicle pings into the field snapshot at ``t``.

    For each segment holding at least one ping aged within ``max_age``,
    the fused speed is ``(1 - w) * segment + w * mean(ping speeds)`` with
    ``w = exp(-age / tau_age)`` and ``age`` that of the newest ping.  The
    result carries a new update at ``t``; earlier updates are untouched.
    """
    fresh = [p for p in pings if t - max_age <= p.timestamp <= t]
    if not fresh:
        return field
    base = field.snapshot(t).copy()
    groups: dict[int, list[VehiclePing]] = {}
    for p in fresh:
        if not field.edges[0] <= p.position <= field.edges[-1]:
            continue
        j = min(int(np.searchsorted(field.edges, p.position, side="right")) - 1,
                field.n_segments - 1)
        groups.setdefault(j, []).append(p)
    if not groups:
        return field
    fused = base.copy()
    for j, ps in groups.items():
        age = t - max(p.timestamp for p in ps)
        w = math.exp(-age / tau_age)
        ping_mean = sum(p.speed for p in ps) / len(ps)
        fused[j] = (1.0 - w) * base[j] + w * ping_mean

    k = field.row_index(t)
    filled_row = field.filled[k].copy()
    if field.times[k] == t:
        times = field.times
        speeds = field.speeds.copy()
        speeds[k] = fused
        filled = field.filled.copy()
    else:
        times = np.insert(field.times, k + 1, t)
        speeds = np.insert(field.speeds, k + 1, fused, axis=0)
        filled = np.insert(field.filled, k + 1, filled_row, axis=0)
    return SpeedField(field.edges, times, speeds, field.interpolation, filled)


def profile_positions(x_start: float, x_end: float, dx: float) -> np.ndarray:
    n = int(math.floor((x_end - x_start) / dx + 1e-9)) + 1
    return x_start + dx * np.arange(n)


def plan_target_profile(field: SpeedField, t: float, route: tuple[float, float],
                        w: float, dx: float = DEFAULT_PROFILE_DX):
    """Target speed every ``dx`` metres along ``route``: the mean field
    speed over the ``w`` metres ahead of each position."""
    x_start, x_end = route
    if not x_end > x_start:
        raise ValueError("route end must exceed route start")
    if not dx > 0:
        raise ValueError("dx must be positive")
    xs = profile_positions(x_start, x_end, dx)
    return xs, np.asarray(kernel_average_speed(field, xs, t, w))


# -- file formats -----------------------------------------------------------

def _check_header(reader, expected, path):
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != expected:
        raise ValueError(f"{path}: expected header {','.join(expected)}")


def read_segments_csv(path: str | Path) -> list[SegmentRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        _check_header(reader, SEGMENT_HEADER, path)
        return [SegmentRecord(float(a), float(b), float(t), float(v))
                for a, b, t, v in (row for row in reader if row)]


def write_segments_csv(field: SpeedField, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(SEGMENT_HEADER) + "\n")
        for r in field.to_records():
            fh.write(f"{r.segment_start!r},{r.segment_end!r},{r.timestamp!r},{r.mean_speed!r}\n")


def read_pings_csv(path: str | Path) -> list[VehiclePing]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        _check_header(reader, PING_HEADER, path)
        return [VehiclePing(int(i), float(t), float(x), float(v))
                for i, t, x, v in (row for row in reader if row)]


def write_profile_csv(positions, speeds, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(PROFILE_HEADER) + "\n")
        for x, v in zip(positions, speeds):
            fh.write(f"{float(x)!r},{float(v)!r}\n")

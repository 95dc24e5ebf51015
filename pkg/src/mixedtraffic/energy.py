"""Fuel model, MPG conversion, run metrics and baseline comparisons."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from mixedtraffic.core import EnergyParams

METERS_PER_MILE = 1609.344
GRAMS_PER_GALLON = EnergyParams().grams_per_gallon

GAP_BINS = np.linspace(0.0, 100.0, 51)
TIME_GAP_BINS = np.linspace(0.0, 10.0, 51)


def fuel_rate(v, a, p: EnergyParams = EnergyParams()):
    """Fuel mass rate in g/s, floored at the fuel-cut rate ``beta``."""
    a_pos = np.maximum(a, 0.0)
    f = (p.C0 + p.C1 * v + p.C2 * v ** 2 + p.C3 * v ** 3
         + p.p0 * a + p.p1 * a * v + p.p2 * a * v ** 2
         + p.q0 * a_pos ** 2 + p.q1 * a_pos ** 2 * v)
    g = np.maximum(f, p.beta)
    return g if np.ndim(g) else float(g)


def mpg(distance: float, fuel_mass: float, grams_per_gallon: float = GRAMS_PER_GALLON) -> float:
    """Miles per gallon from a distance in metres and a fuel mass in grams."""
    if distance == 0:
        return 0.0
    if not fuel_mass > 0:
        raise ValueError("fuel mass must be positive for a non-zero distance")
    return (distance / METERS_PER_MILE) / (fuel_mass / grams_per_gallon)


@dataclass
class ClassMetrics:
    count: int
    distance_m: float
    fuel_g: float
    mpg: float
    mean_distance_km: float


@dataclass
class Metrics:
    """Aggregate metrics of one run; ``avs`` is None without automated vehicles."""

    total: ClassMetrics
    avs: ClassMetrics | None
    humans: ClassMetrics | None
    vehicle_distance_m: dict[int, float]
    vehicle_fuel_g: dict[int, float]
    gap_hist: dict[str, list[int]] = field(default_factory=dict)
    time_gap_hist: dict[str, list[int]] = field(default_factory=dict)

    @property
    def distance_km(self) -> float:
        return self.total.mean_distance_km

    @property
    def mpg_total(self) -> float:
        return self.total.mpg

    @property
    def mpg_avs(self) -> float | None:
        return None if self.avs is None else self.avs.mpg

    def to_dict(self) -> dict[str, Any]:
        def cls(c):
            return None if c is None else c.__dict__.copy()
        return {
            "distance_km": self.distance_km,
            "mpg_avs": self.mpg_avs,
            "mpg_total": self.mpg_total,
            "classes": {"total": cls(self.total), "avs": cls(self.avs), "humans": cls(self.humans)},
            "vehicle_distance_m": {str(k): v for k, v in self.vehicle_distance_m.items()},
            "vehicle_fuel_g": {str(k): v for k, v in self.vehicle_fuel_g.items()},
            "histograms": {
                "gap_bin_edges_m": GAP_BINS.tolist(),
                "time_gap_bin_edges_s": TIME_GAP_BINS.tolist(),
                "gap": self.gap_hist,
                "time_gap": self.time_gap_hist,
            },
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Metrics":
        def cls_(c):
            return None if c is None else ClassMetrics(**c)
        return cls(
            total=cls_(d["classes"]["total"]),
            avs=cls_(d["classes"]["avs"]),
            humans=cls_(d["classes"]["humans"]),
            vehicle_distance_m={int(k): v for k, v in d["vehicle_distance_m"].items()},
            vehicle_fuel_g={int(k): v for k, v in d["vehicle_fuel_g"].items()},
            gap_hist=d["histograms"]["gap"],
            time_gap_hist=d["histograms"]["time_gap"],
        )


def _class_metrics(ids, distance, fuel, grams_per_gallon):
    if len(ids) == 0:
        return None
    d = float(np.sum(distance[ids]))
    f = float(np.sum(fuel[ids]))
    return ClassMetrics(count=int(len(ids)), distance_m=d, fuel_g=f,
                        mpg=mpg(d, f, grams_per_gallon),
                        mean_distance_km=d / len(ids) / 1000.0)


def aggregate_metrics(table, energy: EnergyParams = EnergyParams(), dt: float = 0.1) -> Metrics:
    """Distance, fuel and proximity metrics from a trajectory table.

    ``table`` is a :class:`~mixedtraffic.sim.TrajectoryTable` (or anything
    with the same columns).  The leader (``is_leader``) is excluded.  Each
    row after a vehicle's first represents the step that ended there, so
    fuel is the sum of ``fuel_rate(v, a) * dt`` over those rows and the
    distance is the sum of ``v * dt``: exactly last minus first position
    under the semi-implicit update.
    """
    if len(table.vehicle_id) == 0:
        raise ValueError("empty trajectory table")
    follower = ~table.is_leader
    vid = table.vehicle_id[follower]
    x = table.position[follower]
    v = table.speed[follower]
    a = table.accel[follower]
    is_av = table.is_av[follower]
    gap = table.gap[follower]
    tgap = table.time_gap[follower]

    ids, first = np.unique(vid, return_index=True)
    # rows are time-ordered, so the first occurrence is each vehicle's entry row
    counted = np.ones(len(vid), dtype=bool)
    counted[first] = False
    slot = np.searchsorted(ids, vid)

    rate = fuel_rate(v, a, energy)
    fuel = np.zeros(len(ids))
    np.add.at(fuel, slot[counted], rate[counted] * dt)
    last = np.zeros(len(ids), dtype=int)
    last[slot] = np.arange(len(vid))
    distance = x[last] - x[first]

    av_of = np.zeros(len(ids), dtype=bool)
    av_of[slot] = is_av
    gpg = energy.grams_per_gallon
    all_idx = np.arange(len(ids))
    metrics = Metrics(
        total=_class_metrics(all_idx, distance, fuel, gpg),
        avs=_class_metrics(all_idx[av_of], distance, fuel, gpg),
        humans=_class_metrics(all_idx[~av_of], distance, fuel, gpg),
        vehicle_distance_m={int(i): float(d) for i, d in zip(ids, distance)},
        vehicle_fuel_g={int(i): float(f) for i, f in zip(ids, fuel)},
    )
    for name, mask in (("human", ~is_av), ("automated", is_av)):
        if mask.any():
            metrics.gap_hist[name] = np.histogram(gap[mask], GAP_BINS)[0].tolist()
            metrics.time_gap_hist[name] = np.histogram(tgap[mask], TIME_GAP_BINS)[0].tolist()
    return metrics


class ScenarioMismatch(ValueError):
    pass


def percent_delta(base: float, new: float) -> float:
    return 100.0 * (new - base) / base


@dataclass
class ComparisonReport:
    """One baseline/controlled pair in the layout of a results-table row.

    ``distance_km`` compares the mean distance of the controlled run's
    AVs with the same vehicles (by id) in the baseline.  The AV MPG delta
    is taken against the baseline's total MPG since the baseline has no
    AVs to compare with.
    """

    label: str
    baseline: dict[str, float | None]
    controlled: dict[str, float | None]
    delta_pct: dict[str, float | None]

    def to_dict(self):
        return {"label": self.label, "baseline": self.baseline,
                "controlled": self.controlled, "delta_pct": self.delta_pct}


def compare_runs(baseline, controlled, label: str = "") -> ComparisonReport:
    """Compare a human-only run against a mixed-autonomy run.

    Both arguments need ``identity`` (a mapping naming the scenario) and
    ``metrics``.  Runs on different trajectories, platoon sizes or seeds
    raise :class:`ScenarioMismatch`.
    """
    for key in ("trajectory", "N", "seed"):
        if baseline.identity.get(key) != controlled.identity.get(key):
            raise ScenarioMismatch(
                f"runs differ in {key}: {baseline.identity.get(key)!r} "
                f"vs {controlled.identity.get(key)!r}")
    bm, cm = baseline.metrics, controlled.metrics
    if cm.avs is not None:
        av_ids = [i for i in controlled.av_ids if i in bm.vehicle_distance_m]
        base_dist = float(np.mean([bm.vehicle_distance_m[i] for i in av_ids])) / 1000.0
        ctrl_dist = cm.avs.mean_distance_km
    else:
        base_dist, ctrl_dist = bm.distance_km, cm.distance_km
    base = {"distance_km": base_dist, "mpg_avs": bm.mpg_avs, "mpg_total": bm.mpg_total}
    ctrl = {"distance_km": ctrl_dist, "mpg_avs": cm.mpg_avs, "mpg_total": cm.mpg_total}
    delta = {
        "distance_km": percent_delta(base_dist, ctrl_dist),
        "mpg_avs": None if cm.mpg_avs is None else percent_delta(bm.mpg_total, cm.mpg_avs),
        "mpg_total": percent_delta(bm.mpg_total, cm.mpg_total),
    }
    return ComparisonReport(label, base, ctrl, delta)


def mean_report(reports: list[ComparisonReport], label: str = "Average") -> ComparisonReport:
    """Average of several comparisons; deltas are recomputed from the means."""
    def avg(side, key):
        vals = [getattr(r, side)[key] for r in reports]
        if any(v is None for v in vals):
            return None
        return float(np.mean(vals))

    keys = ("distance_km", "mpg_avs", "mpg_total")
    base = {k: avg("baseline", k) for k in keys}
    ctrl = {k: avg("controlled", k) for k in keys}
    delta = {
        "distance_km": percent_delta(base["distance_km"], ctrl["distance_km"]),
        "mpg_avs": (None if ctrl["mpg_avs"] is None
                    else percent_delta(base["mpg_total"], ctrl["mpg_avs"])),
        "mpg_total": percent_delta(base["mpg_total"], ctrl["mpg_total"]),
    }
    return ComparisonReport(label, base, ctrl, delta)


def _fmt_value(value, delta=None, digits=2):
    if value is None:
        return "--"
    text = f"{value:.{digits}f}"
    if delta is not None:
        text += f" ({delta:+.2f}%)"
    return text


def format_table(reports: list[ComparisonReport]) -> str:
    """Aligned plain-text table, two lines (human-driven, mixed) per report."""
    header = ["", "", "Distance traveled (km)", "MPG (AVs)", "MPG (total)"]
    rows = [header]
    for r in reports:
        rows.append([r.label, "Human-driven",
                     _fmt_value(r.baseline["distance_km"]), "--",
                     _fmt_value(r.baseline["mpg_total"])])
        rows.append(["", "Mixed-autonomy",
                     _fmt_value(r.controlled["distance_km"], r.delta_pct["distance_km"]),
                     _fmt_value(r.controlled["mpg_avs"], r.delta_pct["mpg_avs"]),
                     _fmt_value(r.controlled["mpg_total"], r.delta_pct["mpg_total"])])
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    lines = []
    for n, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        if n == 0:
            lines.append("-" * len(lines[0]))
    return "\n".join(lines) + "\n"


def report_json(runs: list[dict], comparisons: list[ComparisonReport],
                average: ComparisonReport | None) -> str:
    doc = {
        "runs": runs,
        "comparisons": [c.to_dict() for c in comparisons],
        "average": None if average is None else average.to_dict(),
    }
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


def steady_cruise_mpg(speed: float, duration: float, p: EnergyParams = EnergyParams()) -> float:
    """MPG of a vehicle holding ``speed`` for ``duration`` seconds."""
    fuel = fuel_rate(speed, 0.0, p) * duration
    return mpg(speed * duration, fuel, p.grams_per_gallon)


"""Batch execution of (scenario, penetration, seed) runs and their reports."""
from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from mixedtraffic.core import SimConfig, validate_config
from mixedtraffic.energy import (ComparisonReport, Metrics, compare_runs, format_table,
                                 mean_report, report_json)
from mixedtraffic.scenarios import Scenario
from mixedtraffic.sim import run
from mixedtraffic.traffic_state import write_segments_csv

log = logging.getLogger(__name__)

TIMESPACE_HEADER = "time_s,position_m,speed_mps"


class ExperimentError(RuntimeError):
    pass


@dataclass
class RunSummary:
    """What survives of a run once its files are written."""

    identity: dict
    metrics: Metrics
    av_ids: list[int]
    path: str

    def to_dict(self) -> dict:
        return {"identity": self.identity, "av_ids": self.av_ids,
                "metrics": self.metrics.to_dict()}

    @classmethod
    def from_dict(cls, d: dict, path: str = "") -> "RunSummary":
        return cls(d["identity"], Metrics.from_dict(d["metrics"]), list(d["av_ids"]), path)

    @classmethod
    def load(cls, path: str | Path) -> "RunSummary":
        path = Path(path)
        return cls.from_dict(json.loads(path.read_text(encoding="utf-8")), str(path.parent))


def run_dir_name(penetration: float, seed: int) -> str:
    return f"p{penetration:g}_seed{seed}"


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n",
                    encoding="utf-8")


def write_timespace_csv(table, path: Path, stride: int) -> None:
    keep = ((table.step % stride) == 0) & ~table.is_leader
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(TIMESPACE_HEADER + "\n")
        for t, x, v in zip(table.time[keep], table.position[keep], table.speed[keep]):
            fh.write(f"{t:.1f},{x:.3f},{v:.3f}\n")


def _execute(job) -> RunSummary:
    name, traj, field, config, out, stride = job
    result = run(traj, config, field, scenario=name)
    out.mkdir(parents=True, exist_ok=True)
    result.to_csv(out / "trajectories.csv", stride)
    write_timespace_csv(result.table, out / "timespace.csv", stride)
    (out / "config.json").write_text(config.to_json() + "\n", encoding="utf-8")
    summary = RunSummary(result.identity, result.metrics, result.av_ids, str(out))
    _write_json(out / "metrics.json", summary.to_dict())
    return summary


def run_experiment(scenario: Scenario, penetrations, seeds, out_dir: str | Path,
                   base_config: SimConfig = SimConfig(), stride: int = 10,
                   jobs: int = 1) -> dict:
    """Run every (penetration, seed) pair of a scenario and write reports.

    Layout under ``out_dir/<scenario name>/``: ``leader.csv``, ``field.csv``,
    one ``p<p>_seed<s>/`` directory per run (trajectories, time-space data,
    config, metrics), plus ``report.json`` and, when a baseline and at
    least one controlled penetration are present, ``table.txt``.
    """
    scenario.validate()
    config0 = scenario.config(base_config)
    validate_config(config0).raise_for_errors()
    traj = scenario.load_trajectory()
    field = scenario.load_field(traj, config0)
    root = Path(out_dir) / scenario.name
    root.mkdir(parents=True, exist_ok=True)
    traj.to_csv(root / "leader.csv")
    write_segments_csv(field, root / "field.csv")

    jobs_list = []
    for p in penetrations:
        for seed in seeds:
            cfg = config0.replace(penetration=float(p), seed=int(seed))
            jobs_list.append((scenario.name, traj, field, cfg, root / run_dir_name(p, seed), stride))

    summaries: dict[tuple[float, int], RunSummary] = {}
    if jobs > 1 and len(jobs_list) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [(job, pool.submit(_execute, job)) for job in jobs_list]
            for job, fut in futures:
                try:
                    summaries[(job[3].penetration, job[3].seed)] = fut.result()
                except Exception as exc:
                    raise ExperimentError(
                        f"run failed for scenario {scenario.name!r}, seed {job[3].seed}, "
                        f"p={job[3].penetration:g}: {exc}") from exc
    else:
        for job in jobs_list:
            try:
                summaries[(job[3].penetration, job[3].seed)] = _execute(job)
            except Exception as exc:
                raise ExperimentError(
                    f"run failed for scenario {scenario.name!r}, seed {job[3].seed}, "
                    f"p={job[3].penetration:g}: {exc}") from exc
            log.info("finished %s p=%g seed=%d", scenario.name, job[3].penetration, job[3].seed)

    runs = []
    for (p, seed), s in sorted(summaries.items()):
        runs.append({"penetration": p, "seed": seed, "path": Path(s.path).name,
                     "distance_km": s.metrics.distance_km, "mpg_avs": s.metrics.mpg_avs,
                     "mpg_total": s.metrics.mpg_total})

    comparisons: list[ComparisonReport] = []
    averages: list[ComparisonReport] = []
    controlled = sorted({float(p) for p in penetrations if float(p) > 0})
    if 0.0 in {float(p) for p in penetrations}:
        for p in controlled:
            rows = [compare_runs(summaries[(0.0, int(seed))], summaries[(p, int(seed))],
                                 label=f"seed {int(seed)} (p={p:g})")
                    for seed in seeds]
            comparisons.extend(rows)
            if len(rows) > 1:
                averages.append(mean_report(rows, label=f"Average (p={p:g})"))

    average = averages[0] if len(averages) == 1 else None
    doc = json.loads(report_json(runs, comparisons, average))
    if len(averages) > 1:
        doc["averages"] = [a.to_dict() for a in averages]
    doc["scenario"] = scenario.name
    _write_json(root / "report.json", doc)
    if comparisons:
        (root / "table.txt").write_text(format_table(comparisons + averages), encoding="utf-8")
    return doc

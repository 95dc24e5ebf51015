"""Command-line entry point: ``mixedtraffic <command> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from mixedtraffic.core import LeadingTrajectory, SimConfig, load_config
from mixedtraffic.energy import compare_runs, format_table
from mixedtraffic.experiment import RunSummary, run_experiment
from mixedtraffic.scenarios import (HALF_MILE, PRESETS, Scenario, TrajectorySpec,
                                    derive_field_from_leader, generate_synthetic_trajectory)
from mixedtraffic.traffic_state import (DEFAULT_MAX_AGE, DEFAULT_PROFILE_DX, DEFAULT_TAU_AGE,
                                        LINEAR, STEP, fuse_pings, ingest_segments,
                                        plan_target_profile, read_pings_csv, read_segments_csv,
                                        write_profile_csv, write_segments_csv)


def _base_config(args) -> SimConfig:
    config = load_config(args.config) if args.config else SimConfig()
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    return config


def cmd_run(args) -> int:
    config = _base_config(args)
    if args.lane_changes and config.lane_change is None:
        from mixedtraffic.core import LaneChangeParams
        config = config.replace(lane_change=LaneChangeParams())
    scenario = Scenario.load(args.scenario)
    if args.seeds is not None:
        seeds = args.seeds
    elif args.n_seeds is not None:
        seeds = list(range(args.n_seeds))
    else:
        seeds = [config.seed]
    doc = run_experiment(scenario, args.penetrations, seeds, args.out_dir, config,
                         stride=args.stride, jobs=args.jobs)
    root = Path(args.out_dir) / scenario.name
    table = root / "table.txt"
    if table.exists():
        sys.stdout.write(table.read_text(encoding="utf-8"))
    else:
        for r in doc["runs"]:
            print(f"p={r['penetration']:g} seed={r['seed']}: distance {r['distance_km']:.2f} km, "
                  f"MPG {r['mpg_total']:.2f}")
    print(f"outputs in {root}")
    return 0


def cmd_gen_traj(args) -> int:
    if args.spec:
        spec = TrajectorySpec.from_dict(json.loads(Path(args.spec).read_text(encoding="utf-8")))
    else:
        spec = PRESETS[args.preset]
    traj = generate_synthetic_trajectory(spec, args.seed or 0)
    out = Path(args.output) if args.output else Path(args.out_dir) / "leader.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    traj.to_csv(out)
    print(f"wrote {len(traj)} samples to {out}")
    return 0


def cmd_derive_field(args) -> int:
    traj = LeadingTrajectory.from_csv(args.trajectory)
    field = derive_field_from_leader(traj, args.segment_length, args.update_period)
    out = Path(args.output) if args.output else Path(args.out_dir) / "field.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_segments_csv(field, out)
    n_filled = int(field.filled.sum())
    print(f"wrote {field.n_segments} segments x {len(field.times)} updates to {out} "
          f"({n_filled} imputed cells)")
    return 0


def cmd_plan_profile(args) -> int:
    field = ingest_segments(read_segments_csv(args.segments),
                            offset=(args.offset_x, args.offset_t),
                            interpolation=args.interpolation)
    if args.pings:
        field = fuse_pings(field, read_pings_csv(args.pings), args.time,
                           tau_age=args.tau_age, max_age=args.max_age)
    start = field.edges[0] if args.start is None else args.start
    end = field.edges[-1] if args.end is None else args.end
    xs, target = plan_target_profile(field, args.time, (start, end), args.w, args.dx)
    out = Path(args.output) if args.output else Path(args.out_dir) / "profile.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_profile_csv(xs, target, out)
    print(f"wrote {len(xs)} profile points to {out}")
    return 0


def cmd_compare(args) -> int:
    base = RunSummary.load(args.baseline)
    ctrl = RunSummary.load(args.controlled)
    report = compare_runs(base, ctrl, label=args.label)
    if args.json:
        print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    else:
        sys.stdout.write(format_table([report]))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mixedtraffic",
        description="Platoon simulations of speed-harmonizing automated vehicles.")
    parser.add_argument("--config", help="JSON config file (SimConfig field names)")
    parser.add_argument("--seed", type=int, help="random seed")
    parser.add_argument("--out-dir", default="out", help="output directory (default: out)")
    parser.add_argument("--jobs", type=int, default=1, help="parallel runs (default: 1)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run baseline/controlled simulations of a scenario")
    p.add_argument("scenario", help=f"preset ({', '.join(PRESETS)}) or scenario JSON file")
    p.add_argument("--penetrations", type=float, nargs="+", default=[0.0, 4.0])
    seeds = p.add_mutually_exclusive_group()
    seeds.add_argument("--seeds", type=int, nargs="+")
    seeds.add_argument("--n-seeds", type=int, help="use seeds 0..n-1")
    p.add_argument("--lane-changes", action="store_true", help="enable cut-ins and cut-outs")
    p.add_argument("--stride", type=int, default=10,
                   help="write every n-th step to CSV (default 10; 1 for full rate)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("gen-traj", help="write a synthetic leading trajectory")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--preset", choices=sorted(PRESETS))
    src.add_argument("--spec", help="JSON trajectory spec file")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_gen_traj)

    p = sub.add_parser("derive-field", help="segment speeds from a leading trajectory")
    p.add_argument("trajectory", help="trajectory CSV (time_s,position_m,speed_mps)")
    p.add_argument("--segment-length", type=float, default=HALF_MILE)
    p.add_argument("--update-period", type=float, default=60.0)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_derive_field)

    p = sub.add_parser("plan-profile", help="target speed profile from segment data")
    p.add_argument("segments", help="segment CSV")
    p.add_argument("--time", type=float, required=True, help="planning time, s")
    p.add_argument("--start", type=float, help="route start, m (default: first edge)")
    p.add_argument("--end", type=float, help="route end, m (default: last edge)")
    p.add_argument("--w", type=float, default=3000.0, help="window width, m")
    p.add_argument("--dx", type=float, default=DEFAULT_PROFILE_DX)
    p.add_argument("--pings", help="ping CSV to fuse before planning")
    p.add_argument("--tau-age", type=float, default=DEFAULT_TAU_AGE)
    p.add_argument("--max-age", type=float, default=DEFAULT_MAX_AGE)
    p.add_argument("--interpolation", choices=[LINEAR, STEP], default=LINEAR)
    p.add_argument("--offset-x", type=float, default=0.0)
    p.add_argument("--offset-t", type=float, default=0.0)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_plan_profile)

    p = sub.add_parser("compare", help="compare two runs' metrics.json files")
    p.add_argument("baseline")
    p.add_argument("controlled")
    p.add_argument("--label", default="")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # reported as a machine-readable line on stderr
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Command-line scenario runner.

Subcommands::

    sweptnav run --scene builtin:window
    sweptnav run --cloud scan.xyz --cell 0.5 --start 0,0,-2 --goal 12,0,-2
    sweptnav suite --scenarios window,pool --workers 4
    sweptnav export-scenes DIR
    sweptnav synth-cloud OUT --k 3
    sweptnav calibrate [--write]

Exit codes: 0 success, 2 unreadable or invalid input, 3 planning failure,
4 execution failure after retries.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import yaml

from sweptnav import calibration
from sweptnav.correction import CorrectionError, PlanningProblem, RestartConfig, plan_with_restarts
from sweptnav.geometry import Pose, RobotBody
from sweptnav.optimizer import CostConfig, OptimizerError, write_iteration_log
from sweptnav.scenarios import SCENARIOS, plan_scenario, replanner
from sweptnav.scene import (
    BUILTIN_NAMES,
    SceneError,
    builtin_scene,
    dump_scene,
    export_builtin_scenes,
    load_cloud,
    load_scene_file,
    save_cloud,
    scene_from_cloud,
    synthetic_cloud,
)
from sweptnav.simulator import DEFAULT_DRIFT_GAIN, SUCCESS, VehicleModel, run_episode
from sweptnav.tracker import TrackerConfig

log = logging.getLogger("sweptnav")

EXIT_OK, EXIT_INPUT, EXIT_PLAN, EXIT_EXEC = 0, 2, 3, 4
OUT_ENV = "SWEPTNAV_OUT"

# flag name -> default; None means "derived" (scenario preset or required)
DEFAULTS = {
    "scene": None, "cloud": None, "cell": 0.5, "min_pts": 1, "start": None, "goal": None,
    "v": 0.4, "dmin": 0.4, "obstacle_coeff": 200.0, "length_coeff": 100.0, "waypoints": 20,
    "seed": None, "roll_locked": None, "drift_gain": DEFAULT_DRIFT_GAIN, "plots": True,
}

SUITE_COLUMNS = ("scenario", "outcome", "exit_code", "planned_length", "executed_length",
                 "min_planned_clearance", "min_executed_clearance", "restarts", "retries",
                 "completion_time")


class InputError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    scene_kind: str  # builtin | file | cloud
    scene_ref: str
    s_init: Pose
    s_goal: Pose
    cost: CostConfig
    restart: RestartConfig
    tracker: TrackerConfig
    model: VehicleModel
    out: Path
    seed: int
    roll_locked: bool
    cell: float = 0.5
    min_pts: int = 1
    plots: bool = True

    @property
    def label(self) -> str:
        return self.scene_ref if self.scene_kind == "builtin" else Path(self.scene_ref).stem


def _pose(value, what: str) -> Pose:
    if isinstance(value, str):
        parts = [p for p in value.replace(" ", "").split(",") if p]
    else:
        parts = list(value)
    try:
        nums = [float(p) for p in parts]
    except (TypeError, ValueError):
        raise InputError(f"{what}: expected x,y,z[,yaw[,pitch[,roll]]], got {value!r}") from None
    if not 3 <= len(nums) <= 6 or not all(math.isfinite(x) for x in nums):
        raise InputError(f"{what}: expected 3 to 6 finite numbers, got {value!r}")
    return Pose.from_euler(nums[:3], *nums[3:])


def default_out_root() -> Path:
    return Path(os.environ.get(OUT_ENV, "runs"))


def load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise InputError(f"config {path}: {exc}") from None
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise InputError(f"config {path}: top level must be a mapping")
    doc = {str(k).replace("-", "_"): v for k, v in doc.items()}
    unknown = sorted(set(doc) - set(DEFAULTS) - {"out"})
    if unknown:
        raise InputError(f"config {path}: unknown keys {unknown}")
    return doc


def merge_options(args: argparse.Namespace, file_values: dict) -> dict:
    """Flags win over config-file values, which win over defaults."""
    opts = {}
    for key, default in DEFAULTS.items():
        flag = getattr(args, key, None)
        opts[key] = flag if flag is not None else file_values.get(key, default)
    opts["out"] = getattr(args, "out", None) or file_values.get("out")
    return opts


def build_config(opts: dict, out_dir: Path | None = None) -> RunConfig:
    if (opts["scene"] is None) == (opts["cloud"] is None):
        raise InputError("give exactly one of --scene or --cloud")
    preset = None
    if opts["cloud"] is not None:
        kind, ref = "cloud", str(opts["cloud"])
    elif str(opts["scene"]).startswith("builtin:"):
        kind, ref = "builtin", str(opts["scene"]).split(":", 1)[1]
        if ref not in BUILTIN_NAMES:
            raise InputError(f"unknown builtin scene {ref!r}; choose from {', '.join(BUILTIN_NAMES)}")
        preset = SCENARIOS[ref]
    else:
        kind, ref = "file", str(opts["scene"])
    start, goal = opts["start"], opts["goal"]
    if preset is not None:
        s_init = _pose(start, "start") if start is not None else preset.s_init
        s_goal = _pose(goal, "goal") if goal is not None else preset.s_goal
    else:
        if start is None or goal is None:
            raise InputError("--start and --goal are required for file and cloud scenes")
        s_init, s_goal = _pose(start, "start"), _pose(goal, "goal")
    seed = opts["seed"] if opts["seed"] is not None else (preset.seed if preset else 0)
    roll = opts["roll_locked"] if opts["roll_locked"] is not None else (preset.roll_locked if preset else False)
    try:
        cost = CostConfig(obstacle_coeff=float(opts["obstacle_coeff"]), length_coeff=float(opts["length_coeff"]),
                          d_min=float(opts["dmin"]), n_waypoints=int(opts["waypoints"]))
        tracker = TrackerConfig(v_nominal=float(opts["v"]))
        model = VehicleModel(drift_gain=float(opts["drift_gain"]))
    except (ValueError, TypeError, OptimizerError) as exc:
        raise InputError(str(exc)) from None
    if out_dir is None:
        root = Path(opts["out"]) if opts.get("out") else default_out_root()
        out_dir = root / (ref if kind == "builtin" else Path(ref).stem)
    return RunConfig(kind, ref, s_init, s_goal, cost, RestartConfig(rng_seed=int(seed)), tracker, model,
                     Path(out_dir), int(seed), bool(roll), float(opts["cell"]), int(opts["min_pts"]),
                     bool(opts["plots"]))


def _load_scene(cfg: RunConfig):
    try:
        if cfg.scene_kind == "builtin":
            return builtin_scene(cfg.scene_ref), None
        if cfg.scene_kind == "file":
            return load_scene_file(cfg.scene_ref), None
        cloud = load_cloud(cfg.scene_ref)
        return scene_from_cloud(cloud, cfg.cell, cfg.min_pts, name=Path(cfg.scene_ref).stem)
    except (OSError, SceneError) as exc:
        raise InputError(str(exc)) from None


def _num(x):
    x = float(x)
    return x if math.isfinite(x) else str(x)


def _write_trajectory_csv(traj, path: Path) -> None:
    recs = traj.to_records()
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(recs[0]), lineterminator="\n")
        w.writeheader()
        for r in recs:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


def _write_summary(summary: dict, path: Path) -> None:
    stamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
    path.write_text(f"# generated {stamp}\n" + yaml.safe_dump(summary, sort_keys=False))


def format_summary(summary: dict, title: str) -> str:
    lines = [f"--- {title} ---"]
    for k, v in summary.items():
        lines.append(f"{k}: {json.dumps(v)}")
    lines.append("---")
    return "\n".join(lines)


def execute(cfg: RunConfig) -> tuple[int, dict]:
    """Plan and fly one configuration, writing artifacts under ``cfg.out``."""
    scene, dec = _load_scene(cfg)
    for name, pose in (("start", cfg.s_init), ("goal", cfg.s_goal)):
        if not scene.in_bounds(pose.position):
            raise InputError(f"{name} {pose.position.tolist()} lies outside the scene bounds")
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    (out / "scene.yaml").write_text(dump_scene(scene))
    summary = {"scene": cfg.label, "seed": cfg.seed, "roll_locked": cfg.roll_locked,
               "obstacles": len(scene.obstacles)}
    if dec is not None:
        summary["decomposition"] = {"obstacles": len(dec.obstacles), "dropped_clusters": len(dec.dropped),
                                    "cell": cfg.cell, "min_pts": cfg.min_pts}
    body = RobotBody()
    problem = PlanningProblem(scene, body, cfg.s_init, cfg.s_goal, cfg.roll_locked)
    try:
        report = plan_with_restarts(problem, cfg.restart, cfg.cost)
    except CorrectionError as exc:
        raise InputError(str(exc)) from None
    (out / "plan.yaml").write_text(yaml.safe_dump(_plain(report.to_dict()), sort_keys=False))
    _write_trajectory_csv(report.trajectory, out / "trajectory.csv")
    result = report.result
    write_iteration_log(result.log, out / "iterations.jsonl")
    summary.update({"planned_length": report.trajectory.length,
                    "min_planned_clearance": _num(result.breakdown.min_clearance),
                    "restarts": report.restarts})
    if cfg.plots:
        from sweptnav import plotting
        plotting.plot_convergence(result.log, out / "convergence.png")
    if not report.success:
        summary.update({"executed_length": 0.0, "min_executed_clearance": None, "retries": 0,
                        "completion_time": None, "outcome": "planning_failure"})
        _write_summary(summary, out / "summary.yaml")
        if cfg.plots:
            plotting.plot_run(scene, report.trajectory, [], out / "paths.png")
        return EXIT_PLAN, summary
    trace = run_episode(scene, report.trajectory, cfg.tracker, cfg.model, body=body, d_min=cfg.cost.d_min,
                        replan=replanner(problem, cfg.cost, cfg.restart))
    trace.write_jsonl(out / "trace.jsonl")
    m = trace.metrics
    summary.update({"executed_length": m["executed_length"], "min_executed_clearance": _num(m["min_clearance"]),
                    "retries": m["retries"], "completion_time": m["completion_time"],
                    "max_cross_track": m["max_cross_track"], "outcome": trace.outcome})
    _write_summary(summary, out / "summary.yaml")
    if cfg.plots:
        plotting.plot_run(scene, trace.runs[-1].trajectory, [r.records for r in trace.runs], out / "paths.png")
    return (EXIT_OK if trace.outcome == SUCCESS else EXIT_EXEC), summary


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return _num(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _suite_worker(cfg: RunConfig) -> tuple[int, dict]:
    try:
        return execute(cfg)
    except InputError as exc:
        return EXIT_INPUT, {"scene": cfg.label, "outcome": "input_error", "error": str(exc)}


def suite(names: list[str], opts: dict, out_root: Path, workers: int = 1) -> tuple[int, list[dict], str]:
    unknown = [n for n in names if n not in SCENARIOS]
    if unknown:
        raise InputError(f"unknown scenario(s) {unknown}; choose from {', '.join(SCENARIOS)}")
    configs = [build_config({**opts, "scene": f"builtin:{n}", "cloud": None}, out_root / n) for n in names]
    if workers > 1 and len(configs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_suite_worker, configs))
    else:
        results = [_suite_worker(c) for c in configs]
    rows = []
    for name, (code, s) in zip(names, results):
        row = {"scenario": name, "exit_code": code}
        row.update({k: s.get(k) for k in SUITE_COLUMNS if k not in row})
        rows.append(row)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=SUITE_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: repr(v) if isinstance(v, float) else ("" if v is None else v) for k, v in r.items()})
    table = buf.getvalue()
    out_root.mkdir(parents=True, exist_ok=True)
    (out_root / "suite.csv").write_text(table)
    if rows and opts.get("plots", True):
        from sweptnav import plotting
        plot_rows = [{**r, "min_planned_clearance": _finite(r["min_planned_clearance"]),
                      "min_executed_clearance": _finite(r["min_executed_clearance"])} for r in rows]
        plotting.plot_suite(plot_rows, out_root / "suite.png")
    code = next((r["exit_code"] for r in rows if r["exit_code"] != EXIT_OK), EXIT_OK)
    return code, rows, table


def _finite(v) -> float:
    return float(v) if isinstance(v, (int, float)) and math.isfinite(v) else 0.0


# ---------------------------------------------------------------------------
# argument parsing

def _add_run_flags(p: argparse.ArgumentParser, with_scene: bool = True) -> None:
    if with_scene:
        p.add_argument("--scene", help="builtin:NAME or a scene YAML file")
        p.add_argument("--cloud", help="point-cloud file (x y z per line) to decompose into obstacles")
        p.add_argument("--start", help="start pose x,y,z[,yaw,pitch,roll]; write --start=-1,0,-2 for a leading minus "
                   "(default: scenario preset)")
        p.add_argument("--goal", help="goal pose x,y,z[,yaw,pitch,roll] (default: scenario preset)")
    p.add_argument("--cell", type=float, help="clustering radius for --cloud in m (default 0.5, local choice)")
    p.add_argument("--min-pts", dest="min_pts", type=int,
                   help="drop clusters with fewer points (default 1, local choice)")
    p.add_argument("--v", type=float, help="tracking speed in m/s (default 0.4, published setting)")
    p.add_argument("--dmin", type=float, help="required clearance in m (default 0.4, published setting)")
    p.add_argument("--obstacle-coeff", dest="obstacle_coeff", type=float,
                   help="obstacle cost weight (default 200, published setting)")
    p.add_argument("--length-coeff", dest="length_coeff", type=float,
                   help="path length weight (default 100, published setting)")
    p.add_argument("--waypoints", type=int, help="waypoints per path (default 20, local choice)")
    p.add_argument("--seed", type=int, help="restart sampler seed (default: scenario preset, else 0)")
    p.add_argument("--roll-locked", dest="roll_locked", action=argparse.BooleanOptionalAction, default=None,
                   help="hold roll fixed during optimisation (default: scenario preset)")
    p.add_argument("--drift-gain", dest="drift_gain", type=float,
                   help=f"simulated drift per unit yaw rate (default {DEFAULT_DRIFT_GAIN}, calibrated)")
    p.add_argument("--plots", action=argparse.BooleanOptionalAction, default=None,
                   help="write PNG figures next to the text artifacts (default on)")
    p.add_argument("--out", help=f"output root (default ${OUT_ENV} or ./runs)")
    p.add_argument("--config", help="YAML file with any of the flag values; flags win")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sweptnav", description="Plan and simulate clearance-safe paths.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="plan and simulate one scene")
    _add_run_flags(p)

    p = sub.add_parser("suite", help="run builtin scenarios and tabulate metrics")
    p.add_argument("--scenarios", default=",".join(SCENARIOS),
                   help="comma-separated scenario names (default: all four)")
    p.add_argument("--workers", type=int, default=1, help="parallel scenario processes (default 1)")
    _add_run_flags(p, with_scene=False)

    p = sub.add_parser("export-scenes", help="write the builtin scene YAML files")
    p.add_argument("directory")

    p = sub.add_parser("synth-cloud", help="write a synthetic point cloud of separated primitives")
    p.add_argument("output")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--points", type=int, default=5000, help="points per primitive")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("calibrate", help="sweep the drift gain over the builtin scenarios")
    p.add_argument("--write", action="store_true", help="store the result as the package default")
    return parser


def _cmd_run(args) -> int:
    opts = merge_options(args, load_config_file(args.config))
    cfg = build_config(opts)
    code, summary = execute(cfg)
    print(format_summary(summary, cfg.label))
    return code


def _cmd_suite(args) -> int:
    file_values = load_config_file(args.config)
    opts = merge_options(args, file_values)
    names = [n for n in args.scenarios.split(",") if n.strip()]
    root = Path(opts["out"]) if opts["out"] else default_out_root()
    code, _, table = suite(names, opts, root / "suite", max(1, args.workers))
    sys.stdout.write(table)
    return code


def _cmd_calibrate(args) -> int:
    cases = {name: (builtin_scene(name), plan_scenario(name).trajectory) for name in SCENARIOS}
    res = calibration.sweep(cases)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["drift_gain", "scenario", "outcome", "min_clearance"], lineterminator="\n")
    w.writeheader()
    w.writerows(res.rows)
    sys.stdout.write(buf.getvalue())
    print(f"threshold: {res.threshold}\ndrift_gain: {res.drift_gain}")
    if args.write:
        print(f"wrote {calibration.write_calibration(res)}")
    return EXIT_OK if res.drift_gain is not None else EXIT_INPUT


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "suite":
            return _cmd_suite(args)
        if args.command == "export-scenes":
            for p in export_builtin_scenes(args.directory):
                print(p)
            return EXIT_OK
        if args.command == "synth-cloud":
            cloud, _ = synthetic_cloud(args.k, args.points, args.seed)
            save_cloud(cloud, args.output, comment=f"synthetic k={args.k} seed={args.seed}")
            print(f"{len(cloud)} points -> {args.output}")
            return EXIT_OK
        if args.command == "calibrate":
            return _cmd_calibrate(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    parser.error(f"unknown command {args.command}")
    return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

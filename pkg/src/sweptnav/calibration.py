"""Drift-gain calibration against the builtin scenarios.

The gain is swept upward on a fixed grid; the failure threshold is the first
grid value at which any scenario's first tracking run (nominal speed, no
retries) does not succeed. The recommended default is a third of it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

import yaml

from sweptnav.optimizer import Trajectory
from sweptnav.scene import Scene
from sweptnav.simulator import SUCCESS, VehicleModel, run_episode
from sweptnav.tracker import TrackerConfig

SAFETY_FACTOR = 3.0
DEFAULT_GRID = tuple(round(0.01 * k, 2) for k in range(0, 51))


@dataclass
class CalibrationResult:
    rows: list[dict]
    threshold: float | None
    drift_gain: float | None

    def to_dict(self) -> dict:
        return {"drift_gain": self.drift_gain, "threshold": self.threshold,
                "safety_factor": SAFETY_FACTOR, "rows": self.rows}


def first_run(scene: Scene, traj: Trajectory, drift_gain: float, model: VehicleModel = VehicleModel(),
              tracker_cfg: TrackerConfig = TrackerConfig()):
    m = replace(model, drift_gain=drift_gain)
    trace = run_episode(scene, traj, replace(tracker_cfg, max_retries=0), m)
    return trace.runs[0]


def sweep(cases: dict[str, tuple[Scene, Trajectory]], grid=DEFAULT_GRID,
          model: VehicleModel = VehicleModel(), tracker_cfg: TrackerConfig = TrackerConfig(),
          stop_at_failure: bool = True) -> CalibrationResult:
    rows = []
    threshold = None
    for g in sorted(grid):
        failed = False
        for name in sorted(cases):
            scene, traj = cases[name]
            run = first_run(scene, traj, g, model, tracker_cfg)
            rows.append({"drift_gain": g, "scenario": name, "outcome": run.outcome,
                         "min_clearance": run.metrics["min_clearance"]})
            failed |= run.outcome != SUCCESS
        if failed and threshold is None:
            threshold = g
            if stop_at_failure:
                break
    gain = None
    if threshold is not None:
        # round down so the stored value never exceeds threshold / SAFETY_FACTOR
        gain = math.floor(threshold / SAFETY_FACTOR * 1000.0) / 1000.0
    return CalibrationResult(rows, threshold, gain)


def calibration_path() -> Path:
    return Path(str(resources.files("sweptnav.data").joinpath("calibration.yaml")))


def write_calibration(result: CalibrationResult, path: Path | None = None) -> Path:
    if result.drift_gain is None:
        raise ValueError("no failure found on the grid; cannot derive a drift gain")
    path = calibration_path() if path is None else Path(path)
    payload = {"drift_gain": result.drift_gain, "threshold": result.threshold,
               "safety_factor": SAFETY_FACTOR}
    path.write_text(yaml.safe_dump(payload, sort_keys=True))
    return path

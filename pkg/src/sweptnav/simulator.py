"""Discrete-time kinematic vehicle with rate limits, first-order speed lag and
turn-induced lateral drift, closed around the waypoint tracker.

Attitude is carried as yaw/pitch/roll. Yaw turns at a saturated rate driven
by the heading error; pitch targets come from a proportional depth loop, so
vertical motion is produced by pitching (no heave). While the yaw rate is
nonzero the body slips sideways, outward of the turn, at
``drift_gain * |yaw rate| * u / drift_ref_speed``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable

import numpy as np
import yaml

from sweptnav import tracker as trk
from sweptnav.geometry import Pose, RobotBody, quat_from_euler
from sweptnav.optimizer import Trajectory
from sweptnav.scene import Scene, min_clearance


def _calibrated_drift_gain() -> float:
    # written by ``sweptnav calibrate --write``
    text = resources.files("sweptnav.data").joinpath("calibration.yaml").read_text()
    return float(yaml.safe_load(text)["drift_gain"])


DEFAULT_DRIFT_GAIN = _calibrated_drift_gain()


@dataclass(frozen=True)
class VehicleModel:
    dt: float = 0.05
    speed_tau: float = 0.5
    yaw_rate_limit: float = 0.8
    # heading response gain, saturated at the rate limit (inf = pure slew)
    yaw_gain: float = 3.0
    # "sin" steers on the cross product of heading and command, so a goal that
    # flips behind the vehicle barely turns it; "linear" uses the wrapped error
    yaw_law: str = "sin"
    pitch_rate_limit: float = 0.5
    roll_rate_limit: float = 0.5
    depth_rate_limit: float = 0.3
    depth_gain: float = 1.0
    max_pitch: float = 0.8
    drift_gain: float = DEFAULT_DRIFT_GAIN
    drift_ref_speed: float = 0.4
    # forward speed target falls off with heading error down to throttle_floor
    # at this error (rad); None disables the throttle
    throttle_cutoff: float | None = math.pi / 4
    # fraction of the commanded speed kept at any heading error; the vehicle
    # cannot hover, so goals are overshot rather than approached asymptotically
    throttle_floor: float = 0.2
    current: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        limits = (self.dt, self.speed_tau, self.yaw_rate_limit, self.pitch_rate_limit,
                  self.roll_rate_limit, self.depth_rate_limit, self.depth_gain, self.max_pitch,
                  self.drift_ref_speed)
        if min(limits) <= 0:
            raise ValueError("time step, time constant and rate limits must be positive")
        if self.drift_gain < 0:
            raise ValueError("drift_gain must be non-negative")
        if self.yaw_law not in ("sin", "linear"):
            raise ValueError(f"unknown yaw_law {self.yaw_law!r}")
        if not 0.0 <= self.throttle_floor <= 1.0:
            raise ValueError("throttle_floor must lie in [0, 1]")


@dataclass(frozen=True)
class VehicleState:
    position: tuple[float, float, float]
    yaw: float = 0.0
    pitch: float = 0.0
    roll: float = 0.0
    u: float = 0.0
    yaw_rate: float = 0.0

    @classmethod
    def from_pose(cls, pose: Pose, u: float = 0.0) -> "VehicleState":
        yaw, pitch, roll = pose.euler
        return cls(tuple(float(x) for x in pose.position), yaw, pitch, roll, u)

    @property
    def pose(self) -> Pose:
        return Pose(self.position, quat_from_euler(self.yaw, self.pitch, self.roll))


def _wrap(a: float) -> float:
    a = math.fmod(a, 2 * math.pi)
    if a <= -math.pi:
        a += 2 * math.pi
    elif a > math.pi:
        a -= 2 * math.pi
    return a


def _slew(current: float, target: float, limit: float, dt: float, angular: bool = True) -> float:
    err = _wrap(target - current) if angular else target - current
    return current + min(max(err, -limit * dt), limit * dt)


def _arc(heading0: float, heading1: float, a: float, b: float, dt: float) -> tuple[float, float]:
    """Exact horizontal displacement with heading linear over the tick.

    ``a`` is the along-heading speed and ``b`` the leftward lateral speed.
    """
    dpsi = heading1 - heading0
    if abs(dpsi) < 1e-12:
        c, s = math.cos(heading0), math.sin(heading0)
        return (a * c - b * s) * dt, (a * s + b * c) * dt
    k = dt / dpsi
    s0, s1 = math.sin(heading0), math.sin(heading1)
    c0, c1 = math.cos(heading0), math.cos(heading1)
    dx = k * (a * (s1 - s0) + b * (c1 - c0))
    dy = k * (a * (c0 - c1) + b * (s1 - s0))
    return dx, dy


def step_dynamics(state: VehicleState | Pose, cmd: trk.Command, model: VehicleModel) -> VehicleState:
    """Advance the vehicle one time step under ``cmd``."""
    if isinstance(state, Pose):
        state = VehicleState.from_pose(state)
    dt = model.dt
    err = _wrap(cmd.yaw - state.yaw)
    drive = math.sin(err) if model.yaw_law == "sin" else err
    rate = min(max(model.yaw_gain * drive, -model.yaw_rate_limit), model.yaw_rate_limit)
    dyaw = rate * dt
    if abs(dyaw) > abs(err):
        dyaw = err
    yaw1 = state.yaw + dyaw
    yaw1 = _wrap(yaw1)
    omega = dyaw / dt
    # the inner loop throttles back while the commanded heading is far off
    if model.throttle_cutoff is None:
        v_target = cmd.v
    else:
        c0 = math.cos(model.throttle_cutoff)
        scale = max(0.0, (math.cos(err) - c0) / (1.0 - c0))
        v_target = cmd.v * (model.throttle_floor + (1.0 - model.throttle_floor) * scale)
    u1 = v_target + (state.u - v_target) * math.exp(-dt / model.speed_tau)
    z = state.position[2]
    if cmd.pitch is not None:
        pitch_target = cmd.pitch
    elif u1 > 1e-9:
        w_des = min(max(model.depth_gain * (cmd.d - z), -model.depth_rate_limit), model.depth_rate_limit)
        ratio = min(max(w_des / u1, -math.sin(model.max_pitch)), math.sin(model.max_pitch))
        # positive pitch lowers the nose in the z-up frame
        pitch_target = -math.asin(ratio)
    else:
        pitch_target = state.pitch
    pitch1 = _slew(state.pitch, pitch_target, model.pitch_rate_limit, dt, angular=False)
    roll1 = _slew(state.roll, cmd.roll, model.roll_rate_limit, dt)

    # outward slip during turns, bounded so the body speed never exceeds u
    lateral = -model.drift_gain * omega * u1 / model.drift_ref_speed
    lateral = min(max(lateral, -u1), u1)
    forward = math.sqrt(max(u1 * u1 - lateral * lateral, 0.0))
    horiz = forward * math.cos(pitch1)
    dx, dy = _arc(state.yaw, state.yaw + dyaw, horiz, lateral, dt)
    dz = -forward * math.sin(pitch1) * dt
    cur = model.current
    pos = (state.position[0] + dx + cur[0] * dt,
           state.position[1] + dy + cur[1] * dt,
           state.position[2] + dz + cur[2] * dt)
    return VehicleState(pos, yaw1, pitch1, roll1, u1, omega)


# ---------------------------------------------------------------------------
# episodes

SUCCESS = "success"
COLLISION = "collision"
DIVERGENCE = "divergence"
TIMEOUT = "timeout"
TERMINAL = "terminal_failure"

RECORD_FIELDS = ("run", "t", "x", "y", "z", "yaw", "pitch", "roll", "u", "cmd_v", "cmd_h", "cmd_d",
                 "cmd_yaw", "goal", "clearance", "event")


@dataclass
class RunTrace:
    records: list[dict]
    outcome: str
    v: float
    d_min: float
    trajectory: Trajectory = field(repr=False)
    metrics: dict = field(default_factory=dict)


@dataclass
class SimTrace:
    runs: list[RunTrace]
    outcome: str

    @property
    def records(self) -> list[dict]:
        return [r for run in self.runs for r in run.records]

    @property
    def metrics(self) -> dict:
        m = dict(self.runs[-1].metrics)
        m["outcome"] = self.outcome
        m["retries"] = len(self.runs) - 1
        m["run_outcomes"] = [r.outcome for r in self.runs]
        return m

    def write_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for rec in self.records:
                fh.write(json.dumps({k: rec[k] for k in RECORD_FIELDS}) + "\n")
            fh.write(json.dumps({"summary": self.metrics}) + "\n")


def _cross_track(point: np.ndarray, polyline: np.ndarray) -> float:
    a, b = polyline[:-1], polyline[1:]
    ab = b - a
    denom = np.einsum("ij,ij->i", ab, ab)
    t = np.divide(np.einsum("ij,ij->i", point - a, ab), denom, out=np.zeros(len(a)), where=denom > 0)
    # the end legs extend past the endpoints so overshoot is not counted as cross-track
    lo, hi = np.zeros(len(a)), np.ones(len(a))
    lo[0], hi[-1] = -np.inf, np.inf
    foot = a + np.clip(t, lo, hi)[:, None] * ab
    return float(np.min(np.linalg.norm(point - foot, axis=1)))


def _run_once(scene: Scene, traj: Trajectory, tcfg: trk.TrackerConfig, model: VehicleModel,
              body: RobotBody, timeout: float, divergence_margin: float, run_index: int,
              d_min: float, goal_patience: float) -> RunTrace:
    start = traj.waypoints[0]
    state = VehicleState.from_pose(start)
    ts = trk.TrackerState.start(traj, yaw=state.yaw)
    ctrl_every = max(1, int(round(1.0 / (tcfg.control_rate_hz * model.dt))))
    path = traj.positions
    seg_len = np.linalg.norm(np.diff(path, axis=0), axis=1)
    records = []
    cmd = trk.Command(0.0, 0.0, float(start.position[2]), state.yaw, None, 0.0)
    outcome = TIMEOUT
    executed = 0.0
    min_clear = math.inf
    max_xtrack = 0.0
    steps = int(math.ceil(timeout / model.dt))
    t = 0.0
    goal_since, goal_seen = 0.0, ts.goal_index
    for k in range(steps + 1):
        event = trk.NONE
        if k % ctrl_every == 0:
            cmd, ts, event = trk.step(state.pose, traj, ts, tcfg)
        pose = state.pose
        clear = min_clearance(scene, body.at(pose))
        min_clear = min(min_clear, clear)
        pos = np.asarray(state.position)
        max_xtrack = max(max_xtrack, _cross_track(pos, path))
        records.append({"run": run_index, "t": round(t, 10), "x": pos[0], "y": pos[1], "z": pos[2],
                        "yaw": state.yaw, "pitch": state.pitch, "roll": state.roll, "u": state.u,
                        "cmd_v": cmd.v, "cmd_h": cmd.h, "cmd_d": cmd.d, "cmd_yaw": cmd.yaw,
                        "goal": ts.goal_index, "clearance": clear, "event": event})
        if clear < 0.0:
            outcome = COLLISION
            break
        if event == trk.PATH_COMPLETE:
            outcome = SUCCESS
            break
        gi = ts.goal_index
        if gi != goal_seen:
            goal_since, goal_seen = t, gi
        if np.linalg.norm(path[gi] - pos) > seg_len[gi - 1] + divergence_margin:
            outcome = DIVERGENCE
            break
        # circling a goal without ever reaching it is reported as divergence too
        if t - goal_since > goal_patience + 3.0 * seg_len[gi - 1] / tcfg.v_nominal:
            outcome = DIVERGENCE
            break
        if k == steps:
            break
        nxt = step_dynamics(state, cmd, model)
        executed += float(np.linalg.norm(np.subtract(nxt.position, state.position)))
        state = nxt
        t = (k + 1) * model.dt
    metrics = {"executed_length": executed, "min_clearance": min_clear,
               "completion_time": t, "max_cross_track": max_xtrack, "v": tcfg.v_nominal,
               "d_min": d_min}
    return RunTrace(records, outcome, tcfg.v_nominal, d_min, traj, metrics)


def run_episode(scene: Scene, trajectory: Trajectory, tracker_cfg: trk.TrackerConfig = trk.TrackerConfig(),
                model: VehicleModel = VehicleModel(), timeout: float | None = None,
                body: RobotBody = RobotBody(), d_min: float = 0.4,
                replan: Callable[[float], Trajectory | None] | None = None,
                divergence_margin: float = 2.0, goal_patience: float = 15.0) -> SimTrace:
    """Track ``trajectory`` until completion, retrying slower after failures.

    ``replan(d_min)`` is called on each retry with the reduced margin; when it
    is None (or returns None) the same trajectory is flown again.
    """
    runs: list[RunTrace] = []
    cfg, margin, traj = tracker_cfg, d_min, trajectory
    retries = 0
    while True:
        limit = timeout
        if limit is None:
            limit = 3.0 * traj.length / cfg.v_nominal + 30.0
        run = _run_once(scene, traj, cfg, model, body, limit, divergence_margin, len(runs), margin,
                        goal_patience)
        runs.append(run)
        if run.outcome not in (COLLISION, DIVERGENCE):
            return SimTrace(runs, run.outcome)
        decision = trk.retry_policy(run.outcome, cfg, margin, retries)
        if decision.terminal:
            return SimTrace(runs, TERMINAL)
        retries = decision.retry
        cfg, margin = decision.config, decision.replan_d_min
        if replan is not None:
            new = replan(margin)
            if new is not None:
                traj = new

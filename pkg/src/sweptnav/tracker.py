"""Waypoint tracker producing <v, h, d, o> commands.

The tracker always faces the active goal (yaw law), commands depth with a
ratio law based on the depth of the previously reached goal, and declares the
goal reached once the error is small and has stopped improving.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from sweptnav.geometry import Pose
from sweptnav.optimizer import Trajectory

NONE = "none"
GOAL_REACHED = "goal_reached"
PATH_COMPLETE = "path_complete"


class TrackerError(ValueError):
    pass


class Command(NamedTuple):
    v: float
    h: float
    d: float
    yaw: float
    pitch: float | None  # None: derived by the plant from the depth command
    roll: float

    def to_dict(self) -> dict:
        return {"v": self.v, "h": self.h, "d": self.d, "yaw": self.yaw,
                "pitch": self.pitch, "roll": self.roll}


@dataclass(frozen=True)
class TrackerConfig:
    v_nominal: float = 0.4
    d_reached: float = 0.4
    slide_window: int = 5
    retry_v_scale: float = 0.5
    max_retries: int = 2
    control_rate_hz: float = 10.0
    # narrow-sense formula for e_x == 0 (returns 0 instead of +-pi/2)
    literal_yaw: bool = False
    # "ratio" is the depth law used in the experiments; "arc" interpolates by horizontal progress
    depth_law: str = "ratio"
    # waypoints within this distance of a reached goal are reached with it
    # (the optimiser parks several waypoints on the same corner)
    merge_tol: float = 0.05
    # inside the acceptance radius keep the previous heading instead of
    # swinging toward a goal the vehicle is about to pass
    hold_inside: bool = True

    def __post_init__(self):
        if self.v_nominal <= 0 or self.d_reached <= 0:
            raise TrackerError("v_nominal and d_reached must be positive")
        if self.slide_window < 1:
            raise TrackerError("slide_window must be at least 1")
        if self.depth_law not in ("ratio", "arc"):
            raise TrackerError(f"unknown depth_law {self.depth_law!r}")
        if self.merge_tol < 0:
            raise TrackerError("merge_tol must be non-negative")


@dataclass(frozen=True)
class TrackerState:
    goal_index: int = 1
    z_prev: float = 0.0
    history: tuple[float, ...] = ()
    yaw: float = 0.0
    xy_prev: tuple[float, float] | None = None

    @classmethod
    def start(cls, path: Trajectory, yaw: float = 0.0) -> "TrackerState":
        p0 = path.waypoints[0].position
        return cls(goal_index=1, z_prev=float(p0[2]), history=(), yaw=yaw,
                   xy_prev=(float(p0[0]), float(p0[1])))


def _wrap(a: float) -> float:
    """Normalize to (-pi, pi]."""
    a = math.fmod(a, 2 * math.pi)
    if a <= -math.pi:
        a += 2 * math.pi
    elif a > math.pi:
        a -= 2 * math.pi
    return a


def desired_depth(z_prev: float, z_goal: float, z_current: float) -> float:
    """``z_prev + (1 - z_current / z_prev) * (z_goal - z_prev)``.

    Singular at ``z_prev = 0``; within 1e-6 of the surface the goal depth is
    returned directly.
    """
    if abs(z_prev) < 1e-6:
        return z_goal
    return z_prev + (1.0 - z_current / z_prev) * (z_goal - z_prev)


def arc_depth(z_prev: float, z_goal: float, progress: float) -> float:
    t = min(max(progress, 0.0), 1.0)
    return z_prev + t * (z_goal - z_prev)


def desired_yaw(e_t, previous: float = 0.0, literal: bool = False) -> float:
    x, y = float(e_t[0]), float(e_t[1])
    if x == 0.0 and y == 0.0:
        return previous
    if x > 0:
        yaw = math.atan(y / x)
    elif x < 0:
        yaw = math.pi + math.atan(y / x)
    else:
        yaw = 0.0 if literal else math.copysign(math.pi / 2, y)
    return _wrap(yaw)


def step(state: Pose, path: Trajectory, ts: TrackerState,
         cfg: TrackerConfig = TrackerConfig()) -> tuple[Command, TrackerState, str]:
    """One control tick: command toward the active goal and update goal status."""
    n = len(path)
    if not 1 <= ts.goal_index < n:
        raise TrackerError(f"goal index {ts.goal_index} outside path of {n} waypoints")
    goal = path.waypoints[ts.goal_index].position
    pos = state.position
    e_t = goal - pos
    dist = float(np.linalg.norm(e_t))
    window = ts.history + (dist,)
    # non-improving for slide_window consecutive steps
    stalled = len(ts.history) == cfg.slide_window and all(b >= a for a, b in zip(window, window[1:]))
    history = window[-cfg.slide_window:]
    event = GOAL_REACHED if dist < cfg.d_reached and stalled else NONE
    if event == GOAL_REACHED:
        nxt = ts.goal_index + 1
        while nxt < n - 1 and float(np.linalg.norm(path.waypoints[nxt].position - goal)) < cfg.merge_tol:
            nxt += 1
        if nxt >= n:
            cmd = Command(0.0, 0.0, float(goal[2]), ts.yaw, None, 0.0)
            return cmd, replace(ts, history=()), PATH_COMPLETE
        ts = TrackerState(goal_index=nxt, z_prev=float(goal[2]), history=(), yaw=ts.yaw,
                          xy_prev=(float(goal[0]), float(goal[1])))
        goal = path.waypoints[nxt].position
        e_t = goal - pos
        history = (float(np.linalg.norm(e_t)),)
    if cfg.hold_inside and history[-1] < cfg.d_reached:
        yaw = ts.yaw
    else:
        yaw = desired_yaw(e_t, ts.yaw, cfg.literal_yaw)
    if cfg.depth_law == "arc":
        start_xy = np.array(ts.xy_prev)
        leg = goal[:2] - start_xy
        denom = float(leg @ leg)
        progress = 1.0 if denom == 0 else float((pos[:2] - start_xy) @ leg / denom)
        d = arc_depth(ts.z_prev, float(goal[2]), progress)
    else:
        d = desired_depth(ts.z_prev, float(goal[2]), float(pos[2]))
    cmd = Command(cfg.v_nominal, 0.0, d, yaw, None, 0.0)
    return cmd, replace(ts, history=history, yaw=yaw), event


@dataclass(frozen=True)
class RetryDecision:
    config: TrackerConfig | None
    replan_d_min: float | None
    terminal: bool
    retry: int


def retry_policy(failure: str, cfg: TrackerConfig, d_min: float, retries_used: int) -> RetryDecision:
    """Slow down and shrink the planning margin after a tracking failure."""
    if retries_used >= cfg.max_retries:
        return RetryDecision(None, None, True, retries_used)
    return RetryDecision(replace(cfg, v_nominal=cfg.v_nominal * cfg.retry_v_scale),
                         d_min * cfg.retry_v_scale, False, retries_used + 1)

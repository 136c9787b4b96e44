"""Restart orchestration when the optimiser gets stuck against obstacles.

A failed attempt is diagnosed by its worst colliding waypoint ``s_col``. A
new intermediate waypoint ``w`` is drawn on the plane through ``s_col``
orthogonal to the start-goal line, the seed path is rebuilt through ``w`` and
the optimiser is run again. Once the plane budget is spent, ``w`` is drawn
uniformly inside the scene bounds instead.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from sweptnav.geometry import Pose, RobotBody, slerp
from sweptnav.optimizer import (
    CostConfig,
    OptimizeResult,
    Trajectory,
    interpolate_initial,
    optimize,
    segment_clearances,
    validate,
)
from sweptnav.scene import Scene, min_clearance


class CorrectionError(ValueError):
    pass


@dataclass(frozen=True)
class RestartConfig:
    plane_half_extent: float = 5.0
    max_plane_samples: int = 50
    max_random_restarts: int = 20
    rng_seed: int = 0
    # draws per feasible sample before giving up on a degenerate plane/bounds overlap
    max_draws_per_sample: int = 200

    def __post_init__(self):
        if self.plane_half_extent <= 0:
            raise CorrectionError("plane_half_extent must be positive")
        if self.max_plane_samples < 0 or self.max_random_restarts < 0:
            raise CorrectionError("sample budgets must be non-negative")


@dataclass(frozen=True)
class PlanningProblem:
    scene: Scene
    body: RobotBody
    s_init: Pose
    s_goal: Pose
    roll_locked: bool = False


@dataclass
class Attempt:
    index: int
    kind: str  # straight | plane | random
    seed_waypoint: list[float] | None
    converged: bool
    min_clearance: float
    plane_samples: int = 0
    result: OptimizeResult | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {"index": self.index, "kind": self.kind, "seed_waypoint": self.seed_waypoint,
                "converged": self.converged, "min_clearance": self.min_clearance,
                "plane_samples": self.plane_samples}


@dataclass
class PlanReport:
    trajectory: Trajectory
    success: bool
    attempts: list[Attempt]
    plane_samples_used: int = 0

    @property
    def restarts(self) -> int:
        return max(0, len(self.attempts) - 1)

    @property
    def final(self) -> Attempt:
        return self.attempts[-1]

    @property
    def result(self) -> OptimizeResult:
        for a in self.attempts:
            if a.result is not None and a.result.trajectory is self.trajectory:
                return a.result
        return self.attempts[-1].result

    def to_dict(self) -> dict:
        return {"success": self.success, "restarts": self.restarts,
                "plane_samples_used": self.plane_samples_used,
                "min_clearance": self.result.breakdown.min_clearance,
                "attempts": [a.to_dict() for a in self.attempts]}


def _hinge_costs(traj: Trajectory, scene: Scene, body: RobotBody, cfg: CostConfig) -> list[float]:
    return [cfg.obstacle_coeff * max(0.0, cfg.d_min - c) for c in segment_clearances(traj, scene, body)]


def find_worst_collision(traj: Trajectory, scene: Scene, body: RobotBody,
                         cfg: CostConfig = CostConfig()) -> tuple[Pose, int]:
    """Waypoint with the largest adjacent obstacle cost, and its worse segment."""
    seg = _hinge_costs(traj, scene, body, cfg)
    if not any(c > 0.0 for c in seg):
        raise CorrectionError("trajectory is collision-free; nothing to correct")
    n = len(traj)
    best_k, best = 0, -1.0
    for k in range(n):
        total = (seg[k - 1] if k > 0 else 0.0) + (seg[k] if k < n - 1 else 0.0)
        if total > best:
            best_k, best = k, total
    adjacent = [s for s in (best_k - 1, best_k) if 0 <= s < n - 1]
    worst_seg = max(adjacent, key=lambda s: (seg[s], -s))
    return traj.waypoints[best_k], worst_seg


def _plane_axes(u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # deterministic orthonormal pair; prefers a horizontal first axis
    ref = np.array([0.0, 0.0, 1.0]) if abs(u[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    a = np.cross(ref, u)
    a /= np.linalg.norm(a)
    b = np.cross(u, a)
    return a, b


def _orientation_at(s_init: Pose, s_goal: Pose, point: np.ndarray) -> np.ndarray:
    d = s_goal.position - s_init.position
    denom = float(d @ d)
    t = 0.0 if denom == 0 else float(np.clip((point - s_init.position) @ d / denom, 0.0, 1.0))
    return slerp(s_init.orientation, s_goal.orientation, t)


def _sample_plane(s_init, s_goal, s_col, cfg, scene, body, rng, d_min, budget) -> tuple[Pose | None, int]:
    d = s_goal.position - s_init.position
    norm = float(np.linalg.norm(d))
    if norm == 0.0:
        raise CorrectionError("start and goal coincide; plane normal undefined")
    u = d / norm
    a, b = _plane_axes(u)
    origin = s_col.position
    used = 0
    draws = 0
    cap = max(1, budget) * cfg.max_draws_per_sample
    while used < budget and draws < cap:
        draws += 1
        ca, cb = rng.uniform(-cfg.plane_half_extent, cfg.plane_half_extent, size=2)
        p = origin + ca * a + cb * b
        if not scene.in_bounds(p):
            continue
        used += 1
        pose = Pose(p, _orientation_at(s_init, s_goal, p))
        if min_clearance(scene, body.at(pose)) >= d_min:
            return pose, used
    return None, used


def sample_perpendicular_waypoint(s_init: Pose, s_goal: Pose, s_col: Pose, cfg: RestartConfig,
                                  scene: Scene, body: RobotBody, rng: np.random.Generator,
                                  d_min: float = 0.4) -> Pose | None:
    """First clear waypoint drawn on the plane through ``s_col``, or None."""
    pose, _ = _sample_plane(s_init, s_goal, s_col, cfg, scene, body, rng, d_min, cfg.max_plane_samples)
    return pose


def reseed_path(s_init: Pose, s_goal: Pose, w: Pose, n: int) -> Trajectory:
    """Two straight legs joined at ``w``, segments split by leg length."""
    if n < 3:
        raise CorrectionError("reseeding needs at least 3 waypoints")
    l1 = float(np.linalg.norm(w.position - s_init.position))
    l2 = float(np.linalg.norm(s_goal.position - w.position))
    segs = n - 1
    first = segs // 2 if l1 + l2 == 0 else int(round(segs * l1 / (l1 + l2)))
    first = min(max(first, 1), segs - 1)
    leg1 = interpolate_initial(s_init, w, first + 1).waypoints
    leg2 = interpolate_initial(w, s_goal, segs - first + 1).waypoints
    return Trajectory(leg1 + leg2[1:])


def _random_waypoint(s_init, s_goal, scene, body, rng, d_min, tries=1000) -> Pose:
    lo, hi = scene.bounds
    p = None
    for _ in range(tries):
        p = rng.uniform(lo, hi)
        pose = Pose(p, _orientation_at(s_init, s_goal, p))
        if min_clearance(scene, body.at(pose)) >= d_min:
            return pose
    return Pose(p, _orientation_at(s_init, s_goal, p))


def plan_with_restarts(problem: PlanningProblem, cfg: RestartConfig = RestartConfig(),
                       cost_cfg: CostConfig = CostConfig()) -> PlanReport:
    """Straight seed first, then plane-sampled reseeds, then random reseeds."""
    scene, body = problem.scene, problem.body
    s_init, s_goal = problem.s_init, problem.s_goal
    for name, pose in (("start", s_init), ("goal", s_goal)):
        c = min_clearance(scene, body.at(pose))
        if c < cost_cfg.d_min:
            raise CorrectionError(f"{name} pose clearance {c:.3f} m is below d_min {cost_cfg.d_min}")
    rng = np.random.default_rng(cfg.rng_seed)
    target = cost_cfg.d_min - cost_cfg.clearance_slack
    attempts: list[Attempt] = []

    def run(seed: Trajectory, kind: str, w: Pose | None, used: int = 0) -> bool:
        res = optimize(seed, scene, body, cost_cfg, problem.roll_locked)
        ok = res.converged and validate(res.trajectory, scene, body, target).ok
        attempts.append(Attempt(len(attempts), kind, None if w is None else [float(x) for x in w.position],
                                ok, res.breakdown.min_clearance, used, res))
        return ok

    def report(success: bool, plane_used: int) -> PlanReport:
        if success:
            chosen = attempts[-1]
        else:
            chosen = max(attempts, key=lambda a: (a.min_clearance, -a.index))
        return PlanReport(chosen.result.trajectory, success, attempts, plane_used)

    n = cost_cfg.n_waypoints
    if run(interpolate_initial(s_init, s_goal, n), "straight", None):
        return report(True, 0)
    if n < 3:
        return report(False, 0)

    plane_used = 0
    last_col = None
    while plane_used < cfg.max_plane_samples:
        try:
            last_col = find_worst_collision(attempts[-1].result.trajectory, scene, body, cost_cfg)[0]
        except CorrectionError:
            # latest attempt is clear but not converged: keep the previous s_col
            if last_col is None:
                break
        w, used = _sample_plane(s_init, s_goal, last_col, cfg, scene, body, rng,
                                cost_cfg.d_min, cfg.max_plane_samples - plane_used)
        plane_used += used
        if w is None:
            break
        if run(reseed_path(s_init, s_goal, w, n), "plane", w, used):
            return report(True, plane_used)

    for _ in range(cfg.max_random_restarts):
        w = _random_waypoint(s_init, s_goal, scene, body, rng, cost_cfg.d_min)
        if run(reseed_path(s_init, s_goal, w, n), "random", w):
            return report(True, plane_used)
    return report(False, plane_used)

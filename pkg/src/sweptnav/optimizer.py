"""Sequential convex trajectory optimiser over swept-volume clearances.

The path is a list of waypoint poses. Each interior waypoint contributes six
unconstrained variables (position plus absolute yaw/pitch/roll); endpoints are
fixed. The objective is

    length_coeff * sum |p_{k+1} - p_k|
    + obstacle_coeff * penalty * sum_k max(0, d_min - clearance(segment k))
    + surface_coeff * sum_k f_z(z_k)

where ``clearance(segment k)`` is the signed distance between the scene and
the convex hull of the robot box at waypoints ``k`` and ``k+1``.

Every inner iteration linearises the non-convex terms with central finite
differences, keeps the path-length term to second order, and takes a
trust-region-limited step that is accepted only if the true cost decreases.
The outer loop multiplies the obstacle penalty until every segment clears
``d_min``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from sweptnav.geometry import (
    Pose,
    RobotBody,
    quat_from_euler,
    quat_to_euler,
    quat_to_matrix,
    slerp,
)
from sweptnav.scene import Scene


class OptimizerError(ValueError):
    pass


@dataclass(frozen=True)
class CostConfig:
    obstacle_coeff: float = 200.0
    length_coeff: float = 100.0
    d_min: float = 0.4
    surface_coeff: float = 200.0
    epsilon: float = 0.01
    n_waypoints: int = 20
    max_outer_iters: int = 5
    max_inner_iters: int = 60
    trust_region_init: float = 0.5
    trust_region_shrink: float = 0.5
    trust_region_expand: float = 2.0
    trust_region_max: float = 2.0
    trust_region_min: float = 1e-4
    penalty_growth: float = 10.0
    rel_tol: float = 1e-4
    clearance_slack: float = 1e-3
    fd_step: float = 1e-4
    # "literal" keeps f_z as z + epsilon above -d_min; "hinge" uses max(0, z + d_min)
    surface_mode: str = "literal"

    def __post_init__(self):
        if min(self.obstacle_coeff, self.length_coeff, self.surface_coeff) < 0:
            raise OptimizerError("cost coefficients must be non-negative")
        if self.d_min <= 0 or self.epsilon <= 0:
            raise OptimizerError("d_min and epsilon must be positive")
        if self.n_waypoints < 2:
            raise OptimizerError("n_waypoints must be at least 2")
        if self.surface_mode not in ("literal", "hinge"):
            raise OptimizerError(f"unknown surface_mode {self.surface_mode!r}")


@dataclass(frozen=True, eq=False)
class Trajectory:
    waypoints: tuple[Pose, ...]
    fixed_start: bool = True
    fixed_goal: bool = True

    def __post_init__(self):
        wps = tuple(self.waypoints)
        if len(wps) < 2:
            raise OptimizerError("a trajectory needs at least two waypoints")
        object.__setattr__(self, "waypoints", wps)

    def __len__(self):
        return len(self.waypoints)

    @property
    def positions(self) -> np.ndarray:
        return np.array([w.position for w in self.waypoints])

    @property
    def quaternions(self) -> np.ndarray:
        return np.array([w.orientation for w in self.waypoints])

    @property
    def length(self) -> float:
        return float(np.sum(np.linalg.norm(np.diff(self.positions, axis=0), axis=1)))

    def to_records(self) -> list[dict]:
        out = []
        for i, w in enumerate(self.waypoints):
            yaw, pitch, roll = w.euler
            out.append({"index": i, "x": float(w.position[0]), "y": float(w.position[1]),
                        "z": float(w.position[2]), "qw": float(w.orientation[0]),
                        "qx": float(w.orientation[1]), "qy": float(w.orientation[2]),
                        "qz": float(w.orientation[3]), "yaw": yaw, "pitch": pitch, "roll": roll})
        return out

    @classmethod
    def from_arrays(cls, positions, quaternions) -> "Trajectory":
        return cls(tuple(Pose(p, q) for p, q in zip(positions, quaternions)))


@dataclass
class CostBreakdown:
    length_cost: float
    obstacle_cost: float
    surface_cost: float
    total: float
    clearances: list[float] = field(default_factory=list)

    @property
    def min_clearance(self) -> float:
        return min(self.clearances) if self.clearances else math.inf


@dataclass
class Validation:
    ok: bool
    min_clearance: float
    worst_segment: int | None
    clearances: list[float]


@dataclass
class OptimizeResult:
    trajectory: Trajectory
    breakdown: CostBreakdown
    converged: bool
    log: list[dict]
    clearance_met: bool = False

    def __iter__(self):
        # allows ``traj, breakdown, converged = optimize(...)``
        return iter((self.trajectory, self.breakdown, self.converged))


# ---------------------------------------------------------------------------
# cost terms

def interpolate_initial(s_init: Pose, s_goal: Pose, n: int) -> Trajectory:
    """Straight-line seed: linear positions, slerped orientations, exact endpoints."""
    if n < 2:
        raise OptimizerError(f"need at least 2 waypoints, got {n}")
    wps = [s_init]
    for i in range(1, n - 1):
        t = i / (n - 1)
        wps.append(Pose((1 - t) * s_init.position + t * s_goal.position,
                        slerp(s_init.orientation, s_goal.orientation, t)))
    wps.append(s_goal)
    return Trajectory(tuple(wps))


def surface_cost(z: float, cfg: CostConfig) -> float:
    """Per-state surface cost: ``z + epsilon`` above ``-d_min``, else 0."""
    if cfg.surface_mode == "hinge":
        return max(0.0, z + cfg.d_min)
    return z + cfg.epsilon if z > -cfg.d_min else 0.0


def path_length_cost(traj: Trajectory, cfg: CostConfig) -> float:
    return cfg.length_coeff * traj.length


def path_length_gradient(positions: np.ndarray, cfg: CostConfig) -> np.ndarray:
    """Analytic gradient of the weighted length w.r.t. every waypoint position."""
    seg = np.diff(positions, axis=0)
    norm = np.linalg.norm(seg, axis=1, keepdims=True)
    unit = np.divide(seg, norm, out=np.zeros_like(seg), where=norm > 0)
    grad = np.zeros_like(positions)
    grad[:-1] -= unit
    grad[1:] += unit
    return cfg.length_coeff * grad


def _segment_vertices(local, p0, r0, p1, r1) -> np.ndarray:
    return np.vstack([local @ r0.T + p0, local @ r1.T + p1])


def segment_clearances(traj: Trajectory, scene: Scene, body: RobotBody) -> list[float]:
    """Exact signed clearance of each swept segment against the scene."""
    local = body.local_vertices
    pos = traj.positions
    rots = [w.rotation for w in traj.waypoints]
    packed = scene.packed
    return [packed.min_clearance(_segment_vertices(local, pos[k], rots[k], pos[k + 1], rots[k + 1]))
            for k in range(len(traj) - 1)]


def obstacle_cost(traj: Trajectory, scene: Scene, body: RobotBody,
                  cfg: CostConfig) -> tuple[float, list[float]]:
    clear = segment_clearances(traj, scene, body)
    cost = cfg.obstacle_coeff * sum(max(0.0, cfg.d_min - c) for c in clear)
    return cost, clear


def cost_breakdown(traj: Trajectory, scene: Scene, body: RobotBody, cfg: CostConfig) -> CostBreakdown:
    length = path_length_cost(traj, cfg)
    obst, clear = obstacle_cost(traj, scene, body, cfg)
    surf = cfg.surface_coeff * sum(surface_cost(float(w.position[2]) - scene.surface_z, cfg)
                                   for w in traj.waypoints)
    return CostBreakdown(length, obst, surf, length + obst + surf, clear)


def validate(traj: Trajectory, scene: Scene, body: RobotBody, d_req: float) -> Validation:
    """Check every swept segment against every obstacle; ok iff all >= ``d_req``."""
    clear = segment_clearances(traj, scene, body)
    if not clear:
        return Validation(True, math.inf, None, [])
    worst = int(np.argmin(clear))
    m = float(clear[worst])
    ok = m >= d_req
    return Validation(ok, m, None if ok else worst, clear)


# ---------------------------------------------------------------------------
# optimiser state

class _Problem:
    """Mutable working copy of a trajectory with local cost evaluation."""

    def __init__(self, traj: Trajectory, scene: Scene, body: RobotBody, cfg: CostConfig, roll_locked: bool):
        self.scene = scene
        self.cfg = cfg
        self.local = body.local_vertices
        self.packed = scene.packed
        self.n = len(traj)
        self.pos = traj.positions.copy()
        self.quat = traj.quaternions.copy()
        self.euler = np.array([quat_to_euler(q) for q in self.quat])
        self.rot = np.array([quat_to_matrix(q) for q in self.quat])
        self.dofs = (0, 1, 2, 3, 4) if roll_locked else (0, 1, 2, 3, 4, 5)
        self.penalty = 1.0
        self.cutoff = cfg.d_min + 1e-9
        self.free = list(range(1, self.n - 1))

    # -- state access ----------------------------------------------------
    def variables(self) -> np.ndarray:
        return np.concatenate([np.concatenate([self.pos[k], self.euler[k]])[list(self.dofs)] for k in self.free]) \
            if self.free else np.zeros(0)

    def set_variables(self, x: np.ndarray) -> None:
        m = len(self.dofs)
        for i, k in enumerate(self.free):
            full = np.concatenate([self.pos[k], self.euler[k]])
            full[list(self.dofs)] = x[i * m:(i + 1) * m]
            self.pos[k] = full[:3]
            if np.any(full[3:] != self.euler[k]):
                self.euler[k] = full[3:]
                self.quat[k] = quat_from_euler(*full[3:])
                self.rot[k] = quat_to_matrix(self.quat[k])

    def trajectory(self) -> Trajectory:
        return Trajectory.from_arrays(self.pos, self.quat)

    # -- costs -----------------------------------------------------------
    def _clearance(self, p0, r0, p1, r1) -> float:
        verts = np.vstack([self.local @ r0.T + p0, self.local @ r1.T + p1])
        return self.packed.min_clearance(verts, self.cutoff)

    def _surface(self, z: float) -> float:
        return self.cfg.surface_coeff * surface_cost(z - self.scene.surface_z, self.cfg)

    def _hinge(self, c: float) -> float:
        return max(0.0, self.cfg.d_min - c)

    def terms(self) -> tuple[float, float, float]:
        """(length, hinge sum, surface) for the whole path at the current state."""
        length = float(np.sum(np.linalg.norm(np.diff(self.pos, axis=0), axis=1)))
        hinge = 0.0
        for k in range(self.n - 1):
            hinge += self._hinge(self._clearance(self.pos[k], self.rot[k], self.pos[k + 1], self.rot[k + 1]))
        surf = sum(self._surface(float(z)) for z in self.pos[:, 2])
        return length, hinge, surf

    def weighted(self, terms) -> tuple[float, float, float, float]:
        length, hinge, surf = terms
        lc = self.cfg.length_coeff * length
        oc = self.cfg.obstacle_coeff * self.penalty * hinge
        return lc + oc + surf, lc, oc, surf

    def local_cost(self, k: int, p: np.ndarray, r: np.ndarray) -> float:
        """Cost terms touched by waypoint ``k`` when placed at (p, r)."""
        cfg = self.cfg
        prev_p, next_p = self.pos[k - 1], self.pos[k + 1]
        length = float(np.linalg.norm(p - prev_p) + np.linalg.norm(next_p - p))
        hinge = (self._hinge(self._clearance(prev_p, self.rot[k - 1], p, r))
                 + self._hinge(self._clearance(p, r, next_p, self.rot[k + 1])))
        return (cfg.length_coeff * length + cfg.obstacle_coeff * self.penalty * hinge
                + self._surface(float(p[2])))

    def gradient(self) -> np.ndarray:
        """Finite-difference gradient over all free variables.

        Central differences, except where both one-sided slopes point
        downhill (a ridge of the max/min structure, e.g. a path through the
        centre of a symmetric obstacle): there the steeper side is taken,
        ties going to the positive direction.
        """
        h = self.cfg.fd_step
        m = len(self.dofs)
        g = np.zeros(len(self.free) * m)
        for i, k in enumerate(self.free):
            base = np.concatenate([self.pos[k], self.euler[k]])
            f0 = self.local_cost(k, self.pos[k], self.rot[k])
            for j, dof in enumerate(self.dofs):
                vals = []
                for sgn in (1.0, -1.0):
                    x = base.copy()
                    x[dof] += sgn * h
                    if dof < 3:
                        vals.append(self.local_cost(k, x[:3], self.rot[k]))
                    else:
                        vals.append(self.local_cost(k, x[:3], quat_to_matrix(quat_from_euler(*x[3:]))))
                fp, fm = vals
                fwd = (fp - f0) / h
                bwd = (f0 - fm) / h
                if fwd < 0.0 and bwd > 0.0:
                    # near-ties count as ties so symmetric neighbours agree
                    tie = 1e-6 * max(-fwd, bwd)
                    g[i * m + j] = fwd if -fwd >= bwd - tie else bwd
                else:
                    g[i * m + j] = (fp - fm) / (2 * h)
        return g

    def length_hessian(self, floor: float = 1e-2) -> np.ndarray:
        """Second-order model of the weighted length over free variables."""
        m = len(self.dofs)
        size = len(self.free) * m
        H = np.zeros((size, size))
        seg = np.diff(self.pos, axis=0)
        for s in range(self.n - 1):
            d = seg[s]
            norm = max(float(np.linalg.norm(d)), floor)
            u = d / norm
            block = self.cfg.length_coeff * (np.eye(3) - np.outer(u, u)) / norm
            ends = []
            for k, sign in ((s, -1.0), (s + 1, 1.0)):
                if 1 <= k <= self.n - 2:
                    ends.append((self.free.index(k), sign))
            for ia, sa in ends:
                for ib, sb in ends:
                    H[ia * m:ia * m + 3, ib * m:ib * m + 3] += sa * sb * block
        return H


def _record(it, outer, costs, radius, accepted, penalty) -> dict:
    total, lc, oc, sc = costs
    return {"iter": it, "outer": outer, "total": total, "length_cost": lc, "obstacle_cost": oc,
            "surface_cost": sc, "trust_radius": radius, "accepted": accepted, "penalty": penalty}


def optimize(traj: Trajectory, scene: Scene, body: RobotBody, cfg: CostConfig = CostConfig(),
             roll_locked: bool = False) -> OptimizeResult:
    """Improve ``traj`` until every swept segment clears ``cfg.d_min``.

    Returns an :class:`OptimizeResult` (unpackable as ``traj, breakdown,
    converged``). ``converged`` requires both the clearance target and a
    stationary final inner loop; otherwise the best trajectory found is
    returned with ``converged = False``.
    """
    prob = _Problem(traj, scene, body, cfg, roll_locked)
    log: list[dict] = []
    it = 0
    radius = cfg.trust_region_init
    target = cfg.d_min - cfg.clearance_slack
    converged = False
    clearance_met = False
    prev_worst = -math.inf
    for outer in range(cfg.max_outer_iters):
        prob.penalty = cfg.penalty_growth ** outer
        terms = prob.terms()
        costs = prob.weighted(terms)
        log.append(_record(it, outer, costs, radius, True, prob.penalty))
        stationary = False
        small_steps = 0
        if not prob.free:
            stationary = True
        for _ in range(cfg.max_inner_iters):
            g = prob.gradient()
            if not np.any(np.abs(g) > 1e-9 * max(1.0, abs(costs[0]))):
                stationary = True
                break
            H = prob.length_hessian()
            mu = cfg.length_coeff * 1e-2 + 1e-9
            A = H + mu * np.eye(len(g))
            direction = np.linalg.solve(A, -g)
            x0 = prob.variables()
            accepted = False
            while radius >= cfg.trust_region_min:
                step = direction
                peak = float(np.max(np.abs(step)))
                if peak > radius:
                    step = step * (radius / peak)
                prob.set_variables(x0 + step)
                new_terms = prob.terms()
                new_costs = prob.weighted(new_terms)
                it += 1
                if new_costs[0] < costs[0]:
                    accepted = True
                    log.append(_record(it, outer, new_costs, radius, True, prob.penalty))
                    rel = (costs[0] - new_costs[0]) / max(abs(costs[0]), 1e-12)
                    costs, terms = new_costs, new_terms
                    if peak >= radius:
                        radius = min(radius * cfg.trust_region_expand, cfg.trust_region_max)
                    small_steps = small_steps + 1 if rel < cfg.rel_tol else 0
                    break
                log.append(_record(it, outer, new_costs, radius, False, prob.penalty))
                prob.set_variables(x0)
                radius *= cfg.trust_region_shrink
            if not accepted:
                stationary = True
                radius = cfg.trust_region_min * 10
                break
            if small_steps >= 2:
                stationary = True
                break
        clear = segment_clearances(prob.trajectory(), scene, body)
        worst = min(clear)
        if worst >= target:
            clearance_met = True
            converged = stationary
            break
        # penalty escalation cannot move a stuck state out of collision
        if outer >= 1 and worst < 0.0 and worst - prev_worst < 1e-3:
            break
        prev_worst = worst
        radius = max(radius, cfg.trust_region_init)
    result_traj = prob.trajectory()
    breakdown = cost_breakdown(result_traj, scene, body, cfg)
    return OptimizeResult(result_traj, breakdown, converged, log, clearance_met)


def write_iteration_log(records: Iterable[dict], path) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=False) + "\n")

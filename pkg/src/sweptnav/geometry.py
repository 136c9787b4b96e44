"""Convex-geometry kernel: poses, polytopes, support, distance and swept hulls.

Conventions
-----------
* World frame is z-up; ``z = 0`` is the water surface, depths are negative.
* Quaternions are ``(w, x, y, z)`` unit quaternions, canonicalised to
  ``w >= 0``.
* Euler angles are intrinsic Z-Y-X (yaw, pitch, roll).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from sweptnav import _gjk


@dataclass(frozen=True)
class GeometryConfig:
    """Tolerances shared by every geometry routine."""

    quat_norm_tol: float = 1e-9
    hull_tol: float = 1e-9
    touch_tol: float = 1e-6
    penetration_tol: float = 1e-4


GEOMETRY = GeometryConfig()


class GeometryError(ValueError):
    """Invalid argument to a geometry routine."""


def vec3(values) -> np.ndarray:
    v = np.asarray(values, dtype=float).reshape(3)
    if not np.all(np.isfinite(v)):
        raise GeometryError(f"non-finite vector {v!r}")
    return v


# ---------------------------------------------------------------------------
# quaternions

def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=float).reshape(4)
    n = float(np.linalg.norm(q))
    if not np.isfinite(n) or n == 0.0:
        raise GeometryError(f"cannot normalise quaternion {q!r}")
    q = q / n
    if q[0] < 0.0:
        q = -q
    return q


def quat_mul(a, b) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_from_euler(yaw: float, pitch: float = 0.0, roll: float = 0.0) -> np.ndarray:
    cy, sy = math.cos(yaw / 2), math.sin(yaw / 2)
    cp, sp = math.cos(pitch / 2), math.sin(pitch / 2)
    cr, sr = math.cos(roll / 2), math.sin(roll / 2)
    q = np.array([
        cr * cp * cy + sr * sp * sy,
        sr * cp * cy - cr * sp * sy,
        cr * sp * cy + sr * cp * sy,
        cr * cp * sy - sr * sp * cy,
    ])
    return quat_normalize(q)


def quat_to_euler(q) -> np.ndarray:
    """Return ``(yaw, pitch, roll)`` for a unit quaternion."""
    w, x, y, z = q
    roll = math.atan2(2 * (w * x + y * z), 1 - 2 * (x * x + y * y))
    s = max(-1.0, min(1.0, 2 * (w * y - z * x)))
    pitch = math.asin(s)
    yaw = math.atan2(2 * (w * z + x * y), 1 - 2 * (y * y + z * z))
    return np.array([yaw, pitch, roll])


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def slerp(q0, q1, t: float) -> np.ndarray:
    """Spherical interpolation along the shorter arc."""
    q0 = np.asarray(q0, dtype=float)
    q1 = np.asarray(q1, dtype=float)
    dot = float(np.dot(q0, q1))
    if dot < 0.0:
        q1 = -q1
        dot = -dot
    if dot > 1.0 - 1e-12:
        return quat_normalize(q0 + t * (q1 - q0))
    theta = math.acos(min(1.0, dot))
    s = math.sin(theta)
    return quat_normalize((math.sin((1 - t) * theta) * q0 + math.sin(t * theta) * q1) / s)


# ---------------------------------------------------------------------------
# poses and bodies

@dataclass(frozen=True, eq=False)
class Pose:
    """Vehicle state: world position plus unit-quaternion orientation."""

    position: np.ndarray
    orientation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        object.__setattr__(self, "position", vec3(self.position))
        q = np.asarray(self.orientation, dtype=float).reshape(4)
        if abs(np.linalg.norm(q) - 1.0) > 1e-6:
            raise GeometryError(f"orientation is not a unit quaternion: {q!r}")
        object.__setattr__(self, "orientation", quat_normalize(q))
        self.position.setflags(write=False)
        self.orientation.setflags(write=False)

    @classmethod
    def from_euler(cls, position, yaw=0.0, pitch=0.0, roll=0.0) -> "Pose":
        return cls(position, quat_from_euler(yaw, pitch, roll))

    @property
    def euler(self) -> np.ndarray:
        return quat_to_euler(self.orientation)

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.orientation)

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return bool(np.array_equal(self.position, other.position)
                    and np.array_equal(self.orientation, other.orientation))

    def __repr__(self):
        p = ", ".join(f"{c:.4g}" for c in self.position)
        e = ", ".join(f"{math.degrees(c):.3g}" for c in self.euler)
        return f"Pose(pos=({p}), ypr_deg=({e}))"


IDENTITY = Pose(np.zeros(3))


@dataclass(frozen=True, eq=False)
class ConvexBody:
    """Convex polytope stored as its vertex set.

    Construct through :func:`convex_hull` when the input may contain interior
    points; the raw constructor only checks shape and finiteness.
    """

    vertices: np.ndarray

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float, copy=True).reshape(-1, 3)
        if v.shape[0] == 0:
            raise GeometryError("convex body needs at least one vertex")
        if not np.all(np.isfinite(v)):
            raise GeometryError("convex body has non-finite vertices")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    def __len__(self):
        return self.vertices.shape[0]

    @property
    def aabb(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def translated(self, offset) -> "ConvexBody":
        return ConvexBody(self.vertices + vec3(offset))


@dataclass(frozen=True)
class RobotBody:
    """Box collision model of the vehicle (full size 0.65 x 0.45 x 0.13 m)."""

    half_extents: tuple[float, float, float] = (0.325, 0.225, 0.065)

    def __post_init__(self):
        h = tuple(float(x) for x in self.half_extents)
        if len(h) != 3 or min(h) <= 0:
            raise GeometryError(f"half extents must be three positive numbers, got {h}")
        object.__setattr__(self, "half_extents", h)

    @property
    def local_vertices(self) -> np.ndarray:
        return box_vertices(np.zeros(3), self.half_extents)

    @property
    def diagonal(self) -> float:
        return 2.0 * float(np.linalg.norm(self.half_extents))

    def at(self, pose: Pose) -> ConvexBody:
        return transform_body(ConvexBody(self.local_vertices), pose)


def box_vertices(center, half_extents, yaw: float = 0.0) -> np.ndarray:
    """Eight corners of an (optionally yawed) box, in a fixed order."""
    c = vec3(center)
    h = np.asarray(half_extents, dtype=float)
    signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float)
    local = signs * h
    if yaw:
        cz, sz = math.cos(yaw), math.sin(yaw)
        rot = np.array([[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]])
        local = local @ rot.T
    return local + c


# ---------------------------------------------------------------------------
# operations

def support(body: ConvexBody, direction) -> np.ndarray:
    """Vertex of ``body`` furthest along ``direction`` (lowest index on ties)."""
    d = vec3(direction)
    if not np.any(d):
        raise GeometryError("support direction must be nonzero")
    return body.vertices[_gjk.support_index(body.vertices, d)].copy()


def transform_body(body: ConvexBody, pose: Pose) -> ConvexBody:
    return ConvexBody(body.vertices @ pose.rotation.T + pose.position)


def convex_hull(points: Sequence | np.ndarray, tol: float = GEOMETRY.hull_tol) -> ConvexBody:
    """Minimal vertex set of the convex hull of ``points``.

    Flat and collinear inputs keep their lower-dimensional hull (a polygon,
    a segment or a single point). Output vertices keep input order.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if pts.shape[0] == 0:
        raise GeometryError("convex hull of an empty point set")
    if not np.all(np.isfinite(pts)):
        raise GeometryError("non-finite point in hull input")
    idx = _hull_indices(pts, tol)
    return ConvexBody(pts[np.sort(idx)])


def _hull_indices(pts: np.ndarray, tol: float) -> np.ndarray:
    centroid = pts.mean(axis=0)
    centred = pts - centroid
    scale = max(float(np.abs(centred).max()), 1.0)
    _, s, vt = np.linalg.svd(centred, full_matrices=False)
    rank = int(np.sum(s > tol * scale * max(1.0, math.sqrt(len(pts)))))
    if rank == 0:
        return np.array([0])
    if rank == 1:
        t = centred @ vt[0]
        return np.unique([int(np.argmin(t)), int(np.argmax(t))])
    if rank == 2:
        coords = centred @ vt[:2].T
        return _qhull_vertices(coords)
    return _qhull_vertices(pts)


def _qhull_vertices(coords: np.ndarray) -> np.ndarray:
    try:
        return ConvexHull(coords).vertices
    except QhullError:
        return ConvexHull(coords, qhull_options="QJ").vertices


def swept_hull(body: RobotBody, p0: Pose, p1: Pose) -> ConvexBody:
    """Convex hull of the robot box placed at two consecutive poses."""
    local = body.local_vertices
    a = local @ p0.rotation.T + p0.position
    b = local @ p1.rotation.T + p1.position
    return convex_hull(np.vstack([a, b]))


def penetration_depth(a: np.ndarray, b: np.ndarray) -> float:
    """Minimum translation separating two overlapping vertex sets.

    Distance from the origin to the boundary of the Minkowski difference,
    taken exactly from its hull facets. Flat differences return 0.
    """
    diff = (a[:, None, :] - b[None, :, :]).reshape(-1, 3)
    centred = diff - diff.mean(axis=0)
    s = np.linalg.svd(centred, compute_uv=False)
    if s[-1] <= 1e-9 * max(s[0], 1.0):
        return 0.0
    try:
        hull = ConvexHull(diff)
    except QhullError:
        return 0.0
    # facet equations are n . x + off <= 0 inside; origin distance = -off
    return max(0.0, float(np.min(-hull.equations[:, 3])))


def signed_distance_arrays(a: np.ndarray, b: np.ndarray) -> float:
    """Signed separation for raw ``(n, 3)`` vertex arrays."""
    d, overlap = _gjk.gjk_distance(a, b)
    if not overlap:
        return float(d)
    depth = penetration_depth(a, b)
    return 0.0 if depth <= GEOMETRY.touch_tol else -depth


def separation_distance(a: ConvexBody, b: ConvexBody) -> float:
    """Signed distance: gap if disjoint, minus penetration depth if overlapping."""
    # averaging both argument orders makes the result exactly symmetric
    d1 = signed_distance_arrays(a.vertices, b.vertices)
    d2 = signed_distance_arrays(b.vertices, a.vertices)
    return 0.5 * (d1 + d2)


def body_volume(body: ConvexBody) -> float:
    try:
        return float(ConvexHull(body.vertices).volume)
    except (QhullError, ValueError):
        return 0.0


def contains_points(body: ConvexBody, points: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Boolean mask of ``points`` inside (or within ``tol`` of) a full-dimensional body."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    hull = ConvexHull(body.vertices)
    eq = hull.equations
    return np.all(pts @ eq[:, :3].T + eq[:, 3] <= tol, axis=1)

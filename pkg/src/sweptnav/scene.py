"""Obstacle maps: scene documents, builtin layouts and point-cloud decomposition."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Any, Iterable

import numpy as np
import yaml
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import ConvexHull, QhullError, cKDTree

from sweptnav import _gjk
from sweptnav.geometry import ConvexBody, box_vertices, convex_hull, penetration_depth, signed_distance_arrays

log = logging.getLogger(__name__)

NO_OBSTACLE = math.inf
BUILTIN_NAMES = ("window", "pipes", "cluttered", "pool")


class SceneError(ValueError):
    """Malformed scene document or invalid scene content."""


@dataclass(frozen=True, eq=False)
class Obstacle:
    id: str
    body: ConvexBody
    tag: str = ""
    # original document entry, kept so boxes serialise back as boxes
    spec: dict = field(default_factory=dict, repr=False)


@dataclass(frozen=True, eq=False)
class Scene:
    obstacles: tuple[Obstacle, ...]
    bounds: tuple[np.ndarray, np.ndarray]
    surface_z: float = 0.0
    name: str = "scene"

    def __post_init__(self):
        lo, hi = (np.asarray(b, dtype=float).reshape(3) for b in self.bounds)
        if np.any(hi <= lo):
            raise SceneError(f"bounds are empty: min={lo.tolist()} max={hi.tolist()}")
        object.__setattr__(self, "bounds", (lo, hi))
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        ids = [o.id for o in self.obstacles]
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        if dupes:
            raise SceneError(f"duplicate obstacle id(s): {', '.join(dupes)}")

    def __len__(self):
        return len(self.obstacles)

    @cached_property
    def packed(self) -> "PackedObstacles":
        return PackedObstacles.from_bodies([o.body for o in self.obstacles])

    def in_bounds(self, point) -> bool:
        p = np.asarray(point, dtype=float)
        lo, hi = self.bounds
        return bool(np.all(p >= lo) and np.all(p <= hi))


class PackedObstacles:
    """Obstacle vertices in one contiguous array for the compiled kernels."""

    def __init__(self, packed, offsets, lo, hi):
        self.packed = packed
        self.offsets = offsets
        self.lo = lo
        self.hi = hi

    @classmethod
    def from_bodies(cls, bodies: list[ConvexBody]) -> "PackedObstacles":
        if not bodies:
            empty = np.zeros((0, 3))
            return cls(np.zeros((1, 3)), np.zeros(1, dtype=np.int64), empty, empty)
        verts = [b.vertices for b in bodies]
        offsets = np.zeros(len(verts) + 1, dtype=np.int64)
        offsets[1:] = np.cumsum([len(v) for v in verts])
        return cls(
            np.ascontiguousarray(np.vstack(verts)),
            offsets,
            np.array([v.min(axis=0) for v in verts]),
            np.array([v.max(axis=0) for v in verts]),
        )

    def __len__(self):
        return len(self.offsets) - 1

    def vertices(self, j: int) -> np.ndarray:
        return self.packed[self.offsets[j]:self.offsets[j + 1]]

    def clearances(self, verts: np.ndarray, cutoff: float = math.inf) -> np.ndarray:
        """Signed distance of ``verts`` to each obstacle.

        Obstacles whose bounding-box gap is at least ``cutoff`` are reported
        by that gap instead of the exact distance.
        """
        if len(self) == 0:
            return np.zeros(0)
        d, overlap, _ = _gjk.distances_to_set(
            np.ascontiguousarray(verts, dtype=float), self.packed, self.offsets, self.lo, self.hi, cutoff)
        for j in np.flatnonzero(overlap):
            depth = penetration_depth(verts, self.vertices(j))
            d[j] = 0.0 if depth <= 1e-6 else -depth
        return d

    def min_clearance(self, verts: np.ndarray, cutoff: float = math.inf) -> float:
        if len(self) == 0:
            return NO_OBSTACLE
        return float(self.clearances(verts, cutoff).min())


def min_clearance(scene: Scene, body: ConvexBody) -> float:
    """Smallest signed separation between ``body`` and any obstacle."""
    return scene.packed.min_clearance(body.vertices)


# ---------------------------------------------------------------------------
# scene documents

def _vector(value, where: str, n: int = 3) -> list[float]:
    if not isinstance(value, (list, tuple)) or len(value) != n:
        raise SceneError(f"{where}: expected a list of {n} numbers, got {value!r}")
    try:
        out = [float(v) for v in value]
    except (TypeError, ValueError):
        raise SceneError(f"{where}: expected numbers, got {value!r}") from None
    if not all(math.isfinite(v) for v in out):
        raise SceneError(f"{where}: non-finite value in {value!r}")
    return out


def _obstacle_from_entry(entry: Any, where: str) -> Obstacle:
    if not isinstance(entry, dict):
        raise SceneError(f"{where}: expected a mapping, got {type(entry).__name__}")
    if "id" not in entry:
        raise SceneError(f"{where}.id: missing")
    oid = str(entry["id"])
    kind = entry.get("kind")
    tag = str(entry.get("tag", ""))
    if kind == "box":
        center = _vector(entry.get("center"), f"{where}.center")
        half = _vector(entry.get("half_extents"), f"{where}.half_extents")
        if min(half) <= 0:
            raise SceneError(f"{where}.half_extents: must be positive, got {half}")
        try:
            yaw_deg = float(entry.get("yaw_deg", 0.0))
        except (TypeError, ValueError):
            raise SceneError(f"{where}.yaw_deg: expected a number") from None
        body = ConvexBody(box_vertices(center, half, math.radians(yaw_deg)))
        spec = {"kind": "box", "center": center, "half_extents": half, "yaw_deg": yaw_deg}
    elif kind == "hull":
        raw = entry.get("vertices")
        if not isinstance(raw, list) or not raw:
            raise SceneError(f"{where}.vertices: expected a non-empty list of points")
        verts = [_vector(v, f"{where}.vertices[{i}]") for i, v in enumerate(raw)]
        body = ConvexBody(verts)
        spec = {"kind": "hull", "vertices": verts}
    else:
        raise SceneError(f"{where}.kind: expected 'box' or 'hull', got {kind!r}")
    return Obstacle(oid, body, tag, spec)


def scene_from_dict(doc: Any) -> Scene:
    if not isinstance(doc, dict):
        raise SceneError("scene document must be a mapping")
    bounds = doc.get("bounds")
    if not isinstance(bounds, dict):
        raise SceneError("bounds: expected a mapping with 'min' and 'max'")
    lo = _vector(bounds.get("min"), "bounds.min")
    hi = _vector(bounds.get("max"), "bounds.max")
    try:
        surface_z = float(doc.get("surface_z", 0.0))
    except (TypeError, ValueError):
        raise SceneError("surface_z: expected a number") from None
    entries = doc.get("obstacles") or []
    if not isinstance(entries, list):
        raise SceneError("obstacles: expected a list")
    obstacles = [_obstacle_from_entry(e, f"obstacles[{i}]") for i, e in enumerate(entries)]
    return Scene(tuple(obstacles), (lo, hi), surface_z, str(doc.get("name", "scene")))


def load_scene(text: str) -> Scene:
    """Parse a YAML (or JSON) scene document."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise SceneError(f"unreadable scene document: {exc}") from None
    return scene_from_dict(doc)


def load_scene_file(path: str | Path) -> Scene:
    return load_scene(Path(path).read_text())


def scene_to_dict(scene: Scene) -> dict:
    obstacles = []
    for o in scene.obstacles:
        entry = {"id": o.id}
        spec = o.spec or {"kind": "hull", "vertices": o.body.vertices.tolist()}
        entry.update(spec)
        if o.tag:
            entry["tag"] = o.tag
        obstacles.append(entry)
    lo, hi = scene.bounds
    return {
        "name": scene.name,
        "bounds": {"min": lo.tolist(), "max": hi.tolist()},
        "surface_z": float(scene.surface_z),
        "obstacles": obstacles,
    }


class _FlowListDumper(yaml.SafeDumper):
    pass


def _represent_list(dumper, data):
    flow = all(isinstance(v, (int, float)) for v in data)
    return dumper.represent_sequence("tag:yaml.org,2002:seq", data, flow_style=flow)


_FlowListDumper.add_representer(list, _represent_list)


def dump_scene(scene: Scene, header: str = "") -> str:
    body = yaml.dump(scene_to_dict(scene), Dumper=_FlowListDumper, sort_keys=False)
    if header:
        body = "".join(f"# {line}\n" if line else "#\n" for line in header.splitlines()) + body
    return body


# ---------------------------------------------------------------------------
# builtin layouts

def _box(oid, lo, hi, tag="") -> dict:
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    return {"id": oid, "kind": "box", "center": ((lo + hi) / 2).round(9).tolist(),
            "half_extents": ((hi - lo) / 2).round(9).tolist(), "yaw_deg": 0.0, "tag": tag}


def prism_vertices(p0, p1, radius: float, sides: int = 12, phase: float = 0.0) -> np.ndarray:
    """Vertices of a ``sides``-gon prism approximating a cylinder from ``p0`` to ``p1``."""
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    axis = p1 - p0
    axis /= np.linalg.norm(axis)
    helper = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(axis, helper)
    u /= np.linalg.norm(u)
    w = np.cross(axis, u)
    # circumscribed polygon so the prism contains the true cylinder
    r = radius / math.cos(math.pi / sides)
    ang = phase + 2 * math.pi * np.arange(sides) / sides
    ring = r * (np.cos(ang)[:, None] * u + np.sin(ang)[:, None] * w)
    return np.vstack([p0 + ring, p1 + ring]).round(9)


def _pipe(oid, p0, p1, radius, tag="pipe") -> dict:
    return {"id": oid, "kind": "hull", "vertices": prism_vertices(p0, p1, radius).tolist(), "tag": tag}


def _window_doc() -> dict:
    wall_x0, wall_x1 = 8.5, 8.7            # wall face 8.6 m ahead of the start at x = 0
    y_right, y_left = -6.0, 5.5
    z_floor, z_ceil = -4.5, -0.5
    open_y = (1.2, 4.8)
    open_z = (-3.6, -0.9)
    obstacles = [
        _box("wall_right", [wall_x0, y_right, z_floor], [wall_x1, open_y[0], z_ceil], "front_wall"),
        _box("wall_left", [wall_x0, open_y[1], z_floor], [wall_x1, y_left, z_ceil], "front_wall"),
        _box("wall_below", [wall_x0, open_y[0], z_floor], [wall_x1, open_y[1], open_z[0]], "front_wall"),
        _box("wall_above", [wall_x0, open_y[0], open_z[1]], [wall_x1, open_y[1], z_ceil], "front_wall"),
        _box("side_wall", [-1.0, y_left, z_floor - 0.2], [14.0, y_left + 0.2, z_ceil + 0.2], "side_wall"),
        _box("floor", [-1.0, y_right, z_floor - 0.2], [14.0, y_left + 0.2, z_floor], "floor"),
        _box("ceiling", [-1.0, y_right, z_ceil], [14.0, y_left + 0.2, z_ceil + 0.2], "ceiling"),
    ]
    return {"name": "window", "bounds": {"min": [-1.0, y_right, z_floor], "max": [14.0, y_left, z_ceil]},
            "surface_z": 0.0, "obstacles": obstacles}


def _pipes_doc() -> dict:
    z = -2.5
    obstacles = [
        # across the path, horizontal: forces a climb or dive
        _pipe("pipe_horizontal", [3.0, -4.0, z], [3.0, 4.0, z], 0.3),
        # vertical: forces a lateral swerve
        _pipe("pipe_vertical", [6.0, 0.0, -5.0], [6.0, 0.0, -0.3], 0.3),
        # diagonal in the cross-plane: pass-by needs a combined climb and swerve
        _pipe("pipe_diagonal", [9.0, -3.0, z - 3.0], [9.0, 3.0, z + 3.0], 0.3),
    ]
    return {"name": "pipes", "bounds": {"min": [-1.0, -4.0, -5.0], "max": [13.0, 4.0, -0.3]},
            "surface_z": 0.0, "obstacles": obstacles}


# pillar pairs: (x, midpoint y); centres sit 1.0 m either side of the midpoint
CLUTTERED_PAIRS = ((3.5, 0.0), (7.0, 0.6), (10.5, -0.4))
CLUTTERED_HALF_SEPARATION = 1.0
CLUTTERED_PILLAR_RADIUS = 0.25


def _cluttered_doc() -> dict:
    obstacles = []
    for k, (x, mid) in enumerate(CLUTTERED_PAIRS):
        for side, dy in (("a", -CLUTTERED_HALF_SEPARATION), ("b", CLUTTERED_HALF_SEPARATION)):
            obstacles.append(_pipe(f"pillar_{k}{side}", [x, mid + dy, -5.5], [x, mid + dy, 0.5],
                                   CLUTTERED_PILLAR_RADIUS, tag=f"pair_{k}"))
    return {"name": "cluttered", "bounds": {"min": [-1.0, -4.0, -5.0], "max": [15.0, 4.0, 0.0]},
            "surface_z": 0.0, "obstacles": obstacles}


POOL_POLES = ((7.5, 7.75), (11.0, 7.15), (14.5, 7.8), (18.5, 7.2))


def _pool_doc() -> dict:
    L, W, D = 25.0, 15.0, 4.0
    t = 0.2
    obstacles = [
        _box("pool_floor", [0, 0, -D - t], [L, W, -D], "pool"),
        _box("wall_south", [0, -t, -D - t], [L, 0, 0.3], "pool"),
        _box("wall_north", [0, W, -D - t], [L, W + t, 0.3], "pool"),
        _box("wall_west", [-t, -t, -D - t], [0, W + t, 0.3], "pool"),
        _box("wall_east", [L, -t, -D - t], [L + t, W + t, 0.3], "pool"),
    ]
    for k, (x, y) in enumerate(POOL_POLES):
        obstacles.append(_pipe(f"pole_{k}", [x, y, -D], [x, y, 0.5], 0.2, tag="pole"))
    return {"name": "pool", "bounds": {"min": [0.0, 0.0, -D], "max": [L, W, 0.0]},
            "surface_z": 0.0, "obstacles": obstacles}


_GENERATORS = {"window": _window_doc, "pipes": _pipes_doc, "cluttered": _cluttered_doc, "pool": _pool_doc}

_HEADERS = {
    "window": ("Window: start 8.6 m short of a transverse wall with one rectangular gap,\n"
               "a side wall at +y, and horizontal slabs below and above. The transverse wall\n"
               "is four convex panels around the gap."),
    "pipes": ("Pipes: three 12-sided prisms (horizontal, vertical, diagonal) crossing the\n"
              "start-goal line at different x positions."),
    "cluttered": ("Cluttered: three pillar pairs staggered in y along x; each pair leaves a\n"
                  "1.5 m gap whose centre is the pair midpoint."),
    "pool": ("Pool: 25 m x 15 m x 4 m basin with four poles between x = 7.5 and x = 18.5;\n"
             "the scenario plans with roll held at zero."),
}


def generate_builtin(name: str) -> Scene:
    """Build a builtin scene from its generator (no file access)."""
    if name not in _GENERATORS:
        raise SceneError(f"unknown builtin scene {name!r}; expected one of {', '.join(BUILTIN_NAMES)}")
    return scene_from_dict(_GENERATORS[name]())


def builtin_scene_text(name: str) -> str:
    scene = generate_builtin(name)
    return dump_scene(scene, header=_HEADERS[name] + "\nGenerated by `sweptnav export-scenes`; do not edit by hand.")


def builtin_scene(name: str) -> Scene:
    """Load the committed document for a builtin scene through the parser."""
    if name not in _GENERATORS:
        raise SceneError(f"unknown builtin scene {name!r}; expected one of {', '.join(BUILTIN_NAMES)}")
    text = resources.files("sweptnav.data.scenes").joinpath(f"{name}.yaml").read_text()
    return load_scene(text)


def export_builtin_scenes(directory: str | Path) -> list[Path]:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name in BUILTIN_NAMES:
        p = out / f"{name}.yaml"
        p.write_text(builtin_scene_text(name))
        paths.append(p)
    return paths


# ---------------------------------------------------------------------------
# point clouds

@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    organized: bool = False

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise SceneError("point cloud has non-finite coordinates")
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)


def load_cloud(path: str | Path) -> PointCloud:
    """Read whitespace-separated ``x y z`` lines ('#' starts a comment)."""
    try:
        pts = np.loadtxt(path, comments="#", ndmin=2)
    except ValueError as exc:
        raise SceneError(f"{path}: unreadable point cloud: {exc}") from None
    if pts.size == 0:
        return PointCloud(np.zeros((0, 3)))
    if pts.shape[1] != 3:
        raise SceneError(f"{path}: expected 3 columns, got {pts.shape[1]}")
    return PointCloud(pts)


def save_cloud(cloud: PointCloud, path: str | Path, comment: str = "") -> None:
    np.savetxt(path, cloud.points, fmt="%.6f", header=comment)


@dataclass
class Decomposition:
    obstacles: list[Obstacle]
    labels: np.ndarray
    dropped: list[int]          # sizes of clusters discarded for having < min_pts points
    seconds: float


def cluster_points(points: np.ndarray, cell: float) -> np.ndarray:
    """Single-linkage clustering over a uniform grid of size ``cell``.

    Occupied cells sharing a face, edge or corner are linked. Labels are
    ordered by each cluster's first point, so fixed input order gives fixed
    labels.
    """
    keys = np.floor(points / cell).astype(np.int64)
    cells, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    tree = cKDTree(cells)
    pairs = tree.query_pairs(r=math.sqrt(3) + 1e-6, output_type="ndarray")
    n = len(cells)
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n)) if len(pairs) else coo_matrix((n, n))
    _, cell_label = connected_components(graph, directed=False)
    raw = cell_label[inverse]
    _, first = np.unique(raw, return_index=True)
    order = np.argsort(first)
    remap = np.empty_like(order)
    remap[np.unique(raw)[order]] = np.arange(len(order))
    return remap[raw]


def decompose_cloud_detailed(cloud: PointCloud, cell: float, min_pts: int = 1) -> Decomposition:
    if cell <= 0:
        raise SceneError(f"cell must be positive, got {cell}")
    if min_pts < 1:
        raise SceneError(f"min_pts must be at least 1, got {min_pts}")
    t0 = time.perf_counter()
    if len(cloud) == 0:
        return Decomposition([], np.zeros(0, dtype=np.int64), [], 0.0)
    labels = cluster_points(cloud.points, cell)
    obstacles, dropped = [], []
    for k in range(int(labels.max()) + 1):
        members = cloud.points[labels == k]
        if len(members) < min_pts:
            dropped.append(len(members))
            continue
        body = convex_hull(members)
        obstacles.append(Obstacle(f"cluster_{len(obstacles)}", body, "cloud"))
    if dropped:
        log.info("dropped %d cluster(s) below %d points: sizes %s", len(dropped), min_pts, dropped)
    return Decomposition(obstacles, labels, dropped, time.perf_counter() - t0)


def decompose_cloud(cloud: PointCloud, cell: float, min_pts: int = 1) -> list[Obstacle]:
    """Convex obstacles from an unorganized cloud: cluster, then hull each cluster."""
    return decompose_cloud_detailed(cloud, cell, min_pts).obstacles


def scene_from_cloud(cloud: PointCloud, cell: float, min_pts: int = 1, name: str = "cloud",
                     margin: float = 2.0) -> tuple[Scene, Decomposition]:
    dec = decompose_cloud_detailed(cloud, cell, min_pts)
    if len(cloud):
        lo = cloud.points.min(axis=0) - margin
        hi = cloud.points.max(axis=0) + margin
    else:
        lo, hi = -np.ones(3), np.ones(3)
    hi[2] = max(hi[2], lo[2] + 1e-3)
    return Scene(tuple(dec.obstacles), (lo, hi), 0.0, name), dec


def synthetic_cloud(k: int, points_per: int = 5000, seed: int = 0,
                    spacing: float = 4.0) -> tuple[PointCloud, list[np.ndarray]]:
    """Surface samples of ``k`` separated boxes and cylinders.

    Returns the cloud and the per-primitive point arrays (ground truth).
    """
    rng = np.random.default_rng(seed)
    parts = []
    for i in range(k):
        center = np.array([spacing * i, spacing * (i % 2) * 0.5, -2.0])
        if i % 2 == 0:
            half = rng.uniform(0.3, 0.8, size=3)
            face = rng.integers(0, 3, size=points_per)
            sign = rng.choice([-1.0, 1.0], size=points_per)
            pts = rng.uniform(-1.0, 1.0, size=(points_per, 3))
            pts[np.arange(points_per), face] = sign
            parts.append(center + pts * half)
        else:
            r = rng.uniform(0.3, 0.6)
            h = rng.uniform(0.5, 1.2)
            ang = rng.uniform(0, 2 * math.pi, size=points_per)
            zz = rng.uniform(-h, h, size=points_per)
            parts.append(center + np.stack([r * np.cos(ang), r * np.sin(ang), zz], axis=1))
    pts = np.vstack(parts) if parts else np.zeros((0, 3))
    return PointCloud(pts), parts


def obstacles_union_contains(obstacles: Iterable[Obstacle], points: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    """Mask of points within ``tol`` of at least one obstacle hull."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    covered = np.zeros(len(pts), dtype=bool)
    for o in obstacles:
        v = o.body.vertices
        if len(v) >= 4:
            try:
                hull = ConvexHull(v)
                eq = hull.equations
                covered |= np.all(pts @ eq[:, :3].T + eq[:, 3] <= tol, axis=1)
                continue
            except QhullError:
                pass
        rest = np.flatnonzero(~covered)
        for i in rest:
            if signed_distance_arrays(pts[i:i + 1], v) <= tol:
                covered[i] = True
    return covered

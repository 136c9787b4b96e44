"""Static figures for run and suite reports (Agg backend, written to files)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.patches import Polygon  # noqa: E402
from scipy.spatial import ConvexHull, QhullError  # noqa: E402

from sweptnav.optimizer import Trajectory  # noqa: E402
from sweptnav.scene import Scene  # noqa: E402

# fixed metadata keeps the PNG bytes independent of the matplotlib build
_META = {"Software": None}
_RUN_COLORS = ("tab:blue", "tab:orange", "tab:red")


def _outline(points: np.ndarray) -> np.ndarray | None:
    pts = np.unique(np.round(points, 9), axis=0)
    if len(pts) < 3:
        return None
    try:
        hull = ConvexHull(pts)
    except QhullError:
        return None
    return pts[hull.vertices]


def _draw_obstacles(ax, scene: Scene, dims: tuple[int, int], band: tuple[float, float], pad: float = 0.3):
    # only obstacles overlapping the path along the hidden axis, so the
    # floor does not cover the top view
    hidden = 3 - sum(dims)
    for ob in scene.obstacles:
        v = ob.body.vertices
        if v[:, hidden].max() < band[0] - pad or v[:, hidden].min() > band[1] + pad:
            continue
        poly = _outline(v[:, dims])
        if poly is not None:
            ax.add_patch(Polygon(poly, closed=True, fc="0.8", ec="0.4", lw=0.6))


def plot_run(scene: Scene, planned: Trajectory, runs: list[list[dict]], path: str | Path) -> Path:
    """Top and side views of the scene, planned path and executed tracks."""
    fig, (top, side) = plt.subplots(2, 1, figsize=(7, 7), constrained_layout=True)
    lo, hi = scene.bounds
    p = planned.positions
    tracks = [np.array([[r["x"], r["y"], r["z"]] for r in recs]).reshape(-1, 3) for recs in runs]
    every = np.vstack([p] + tracks)
    for ax, dims, label in ((top, (0, 1), "y [m]"), (side, (0, 2), "z [m]")):
        hidden = 3 - sum(dims)
        _draw_obstacles(ax, scene, dims, (every[:, hidden].min(), every[:, hidden].max()))
        ax.plot(p[:, dims[0]], p[:, dims[1]], "k--", lw=1, marker=".", ms=3, label="planned")
        for i, xs in enumerate(tracks):
            if len(xs):
                ax.plot(xs[:, dims[0]], xs[:, dims[1]], color=_RUN_COLORS[i % 3], lw=1.2,
                        label=f"run {i}")
        ax.set_xlim(lo[0], hi[0])
        ax.set_ylim(lo[dims[1]], hi[dims[1]])
        ax.set_xlabel("x [m]")
        ax.set_ylabel(label)
    top.set_aspect("equal", adjustable="box")
    side.axhline(scene.surface_z, color="tab:cyan", lw=0.8)
    top.legend(loc="upper right", fontsize=7)
    top.set_title(scene.name)
    out = Path(path)
    fig.savefig(out, dpi=120, metadata=_META)
    plt.close(fig)
    return out


def plot_convergence(log: list[dict], path: str | Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5), constrained_layout=True)
    acc = [r for r in log if r.get("accepted")]
    if acc:
        ax.semilogy([r["iter"] for r in acc], [max(r["total"], 1e-12) for r in acc], "k-", lw=1, label="total")
        ax.semilogy([r["iter"] for r in acc], [max(r["obstacle_cost"], 1e-12) for r in acc], "r-", lw=1,
                    label="obstacle (weighted)")
        for k in sorted({r["outer"] for r in acc})[1:]:
            first = next(r["iter"] for r in acc if r["outer"] == k)
            ax.axvline(first, color="0.7", lw=0.6)
    ax.set_xlabel("iteration")
    ax.set_ylabel("cost")
    ax.legend(fontsize=7)
    out = Path(path)
    fig.savefig(out, dpi=120, metadata=_META)
    plt.close(fig)
    return out


def plot_suite(rows: list[dict], path: str | Path) -> Path:
    """Planned vs executed minimum clearance per scenario."""
    fig, ax = plt.subplots(figsize=(6, 3.5), constrained_layout=True)
    names = [r["scenario"] for r in rows]
    x = np.arange(len(rows))
    ax.bar(x - 0.2, [r["min_planned_clearance"] for r in rows], 0.4, label="planned")
    ax.bar(x + 0.2, [r["min_executed_clearance"] for r in rows], 0.4, label="executed")
    ax.axhline(0.0, color="k", lw=0.6)
    ax.set_xticks(x, names)
    ax.set_ylabel("min clearance [m]")
    ax.legend(fontsize=7)
    out = Path(path)
    fig.savefig(out, dpi=120, metadata=_META)
    plt.close(fig)
    return out

import time

import numpy as np
import pytest
import yaml
from hypothesis import given, settings, strategies as st
from scipy.spatial import Delaunay

from sweptnav.geometry import ConvexBody, RobotBody, box_vertices, separation_distance
from sweptnav.scenarios import SCENARIOS
from sweptnav.scene import (
    BUILTIN_NAMES,
    NO_OBSTACLE,
    Obstacle,
    PointCloud,
    Scene,
    SceneError,
    builtin_scene,
    builtin_scene_text,
    decompose_cloud,
    decompose_cloud_detailed,
    dump_scene,
    generate_builtin,
    load_cloud,
    load_scene,
    min_clearance,
    save_cloud,
    synthetic_cloud,
)

ONE_BOX = """
name: one
bounds: {min: [0, -5, -5], max: [10, 5, 0]}
obstacles:
  - {id: b, kind: box, center: [5, 0, -2], half_extents: [0.5, 0.5, 0.5]}
"""


def inside_hull(points, hull_vertices, tol=1e-6):
    """Independent containment test via a Delaunay tetrahedralisation."""
    tri = Delaunay(hull_vertices)
    return tri.find_simplex(points, tol=tol) >= 0


class TestDocuments:
    def test_single_box(self):
        scene = load_scene(ONE_BOX)
        assert len(scene) == 1
        assert len(scene.obstacles[0].body) == 8

    def test_empty_obstacle_list(self):
        scene = load_scene("bounds: {min: [0, 0, 0], max: [1, 1, 1]}\nobstacles: []\n")
        assert len(scene) == 0
        assert scene.surface_z == 0.0

    @pytest.mark.parametrize("bad, field", [
        ("bounds: {min: [0, 0], max: [1, 1, 1]}", "bounds.min"),
        ("bounds: {min: [0, 0, 0], max: [1, 1, 1]}\nobstacles: [{id: a, kind: sphere}]", "obstacles[0].kind"),
        ("bounds: {min: [0, 0, 0], max: [1, 1, 1]}\nobstacles: [{kind: box}]", "obstacles[0].id"),
        ("bounds: {min: [0, 0, 0], max: [1, 1, 1]}\nobstacles: [{id: a, kind: box, center: [0, 0, 0], "
         "half_extents: [1, -1, 1]}]", "obstacles[0].half_extents"),
        ("bounds: {min: [0, 0, 0], max: [1, 1, 1]}\nobstacles: [{id: a, kind: hull, vertices: [[0, 0]]}]",
         "obstacles[0].vertices[0]"),
        ("bounds: {min: [0, 0, 0], max: [1, 1, 1]}\nsurface_z: deep", "surface_z"),
    ])
    def test_errors_name_the_field(self, bad, field):
        with pytest.raises(SceneError, match=field.replace("[", r"\[").replace("]", r"\]")):
            load_scene(bad)

    def test_duplicate_ids(self):
        doc = ("bounds: {min: [0, 0, 0], max: [9, 9, 9]}\nobstacles:\n"
               "  - {id: a, kind: box, center: [1, 1, 1], half_extents: [0.5, 0.5, 0.5]}\n"
               "  - {id: a, kind: box, center: [5, 5, 5], half_extents: [0.5, 0.5, 0.5]}\n")
        with pytest.raises(SceneError, match="duplicate"):
            load_scene(doc)

    def test_empty_bounds(self):
        with pytest.raises(SceneError):
            load_scene("bounds: {min: [0, 0, 0], max: [1, 0, 1]}")

    @pytest.mark.parametrize("name", BUILTIN_NAMES)
    def test_round_trip(self, name):
        scene = builtin_scene(name)
        again = load_scene(dump_scene(scene))
        assert [o.id for o in again.obstacles] == [o.id for o in scene.obstacles]
        for a, b in zip(scene.obstacles, again.obstacles):
            np.testing.assert_allclose(a.body.vertices, b.body.vertices, atol=1e-9)
            assert a.tag == b.tag
        np.testing.assert_array_equal(scene.bounds[0], again.bounds[0])
        np.testing.assert_array_equal(scene.bounds[1], again.bounds[1])

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.tuples(st.floats(-20, 20), st.floats(-20, 20), st.floats(-20, 20),
                              st.floats(0.01, 3), st.floats(-180, 180)), max_size=6))
    def test_round_trip_random_boxes(self, boxes):
        obstacles = []
        for i, (x, y, z, h, yaw) in enumerate(boxes):
            entry = {"id": f"o{i}", "kind": "box", "center": [x, y, z], "half_extents": [h, h / 2, h],
                     "yaw_deg": yaw}
            obstacles.append(entry)
        doc = {"bounds": {"min": [-30] * 3, "max": [30] * 3}, "obstacles": obstacles}
        first = load_scene(dump_scene(load_scene(yaml.safe_dump(doc))))
        second = load_scene(dump_scene(first))
        for a, b in zip(first.obstacles, second.obstacles):
            np.testing.assert_allclose(a.body.vertices, b.body.vertices, atol=1e-9)


class TestBuiltins:
    @pytest.mark.parametrize("name", BUILTIN_NAMES)
    def test_committed_file_matches_generator(self, name):
        from importlib import resources
        committed = resources.files("sweptnav.data.scenes").joinpath(f"{name}.yaml").read_text()
        assert committed == builtin_scene_text(name)

    @pytest.mark.parametrize("name", BUILTIN_NAMES)
    def test_generator_equals_loaded(self, name):
        a, b = generate_builtin(name), builtin_scene(name)
        for oa, ob in zip(a.obstacles, b.obstacles):
            np.testing.assert_allclose(oa.body.vertices, ob.body.vertices, atol=1e-9)

    def test_unknown_name(self):
        with pytest.raises(SceneError):
            builtin_scene("reef")

    def test_window_wall_at_8_6(self):
        scene = builtin_scene("window")
        start_x = SCENARIOS["window"].start[0]
        panels = [o for o in scene.obstacles if o.tag == "front_wall"]
        assert len(panels) == 4
        faces = {round(float(o.body.vertices[:, 0].min()) - start_x, 9) for o in panels}
        # the wall slab is centred on x = 8.6
        centres = {round(float(o.body.vertices[:, 0].mean()) - start_x, 9) for o in panels}
        assert centres == {8.6}
        assert len(faces) == 1
        assert len(scene) == 7

    def test_window_single_rectangular_opening(self):
        scene = builtin_scene("window")
        panels = [o.body.vertices for o in scene.obstacles if o.tag == "front_wall"]
        # probe the wall plane on a grid: free cells must form one axis-aligned rectangle
        ys = np.arange(-5.95, 5.5, 0.1)
        zs = np.arange(-4.45, -0.5, 0.1)
        free = np.ones((len(ys), len(zs)), dtype=bool)
        for v in panels:
            lo, hi = v.min(axis=0), v.max(axis=0)
            free &= ~((ys[:, None] >= lo[1]) & (ys[:, None] <= hi[1]) & (zs[None] >= lo[2]) & (zs[None] <= hi[2]))
        iy, iz = np.nonzero(free)
        assert free.sum() > 0
        assert free[iy.min():iy.max() + 1, iz.min():iz.max() + 1].all()

    def test_pool_bounds(self):
        lo, hi = builtin_scene("pool").bounds
        np.testing.assert_allclose(hi - lo, [25.0, 15.0, 4.0])

    def test_pool_traverse_length(self):
        sc = SCENARIOS["pool"]
        assert np.linalg.norm(np.subtract(sc.goal, sc.start)) >= 15.0

    def test_pipes_mixed_orientations(self):
        scene = builtin_scene("pipes")
        pipes = [o for o in scene.obstacles if o.tag == "pipe"]
        assert len(pipes) >= 3
        axes = []
        for o in pipes:
            v = o.body.vertices
            axis = v[len(v) // 2:].mean(axis=0) - v[:len(v) // 2].mean(axis=0)
            axes.append(axis / np.linalg.norm(axis))
        # pairwise non-parallel
        for i in range(len(axes)):
            for j in range(i + 1, len(axes)):
                assert abs(axes[i] @ axes[j]) < 0.95

    @pytest.mark.parametrize("name", BUILTIN_NAMES)
    def test_start_goal_clearance(self, name):
        scene, body = builtin_scene(name), RobotBody()
        sc = SCENARIOS[name]
        for pose in (sc.s_init, sc.s_goal):
            assert min_clearance(scene, body.at(pose)) >= 0.4
            assert scene.in_bounds(pose.position)


class TestClearance:
    def test_empty_scene_sentinel(self):
        scene = Scene((), (np.zeros(3), np.ones(3)))
        assert min_clearance(scene, ConvexBody(box_vertices([0, 0, 0], [1, 1, 1]))) == NO_OBSTACLE

    def test_two_metres_from_cube(self):
        scene = load_scene(ONE_BOX)
        body = ConvexBody(box_vertices([5, 0, -2 + 3.0], [0.5, 0.5, 0.5]))
        assert min_clearance(scene, body) == pytest.approx(2.0, abs=1e-12)

    def test_overlap_reports_pair_penetration(self):
        cubes = [ConvexBody(box_vertices([x, 0, 0], [0.5, 0.5, 0.5])) for x in (0.0, 5.0, 10.0)]
        scene = Scene(tuple(Obstacle(f"c{i}", c) for i, c in enumerate(cubes)),
                      (np.full(3, -20.0), np.full(3, 20.0)))
        probe = ConvexBody(box_vertices([5.8, 0, 0], [0.5, 0.5, 0.5]))
        expected = separation_distance(probe, cubes[1])
        assert expected < 0
        assert min_clearance(scene, probe) == pytest.approx(expected, abs=1e-12)


class TestDecomposition:
    def test_two_clusters(self):
        rng = np.random.default_rng(0)
        pts = np.vstack([rng.normal(size=(300, 3)) * 0.2, rng.normal(size=(300, 3)) * 0.2 + [5, 0, 0]])
        assert len(decompose_cloud(PointCloud(pts), 0.5)) == 2

    def test_single_box_cluster(self):
        rng = np.random.default_rng(1)
        pts = rng.uniform(-1, 1, size=(2000, 3)) * [1.0, 0.5, 0.3]
        obs = decompose_cloud(PointCloud(pts), 0.3)
        assert len(obs) == 1
        assert inside_hull(pts, obs[0].body.vertices).all()

    def test_empty_cloud(self):
        assert decompose_cloud(PointCloud(np.zeros((0, 3))), 0.5) == []

    def test_invalid_arguments(self):
        cloud = PointCloud(np.zeros((3, 3)))
        with pytest.raises(SceneError):
            decompose_cloud(cloud, 0.0)
        with pytest.raises(SceneError):
            decompose_cloud(cloud, 0.5, min_pts=0)

    def test_small_clusters_dropped_and_reported(self):
        rng = np.random.default_rng(2)
        pts = np.vstack([rng.uniform(-1, 1, size=(500, 3)), [[10, 10, 10], [10.1, 10, 10]]])
        dec = decompose_cloud_detailed(PointCloud(pts), 0.5, min_pts=5)
        assert len(dec.obstacles) == 1
        assert dec.dropped == [2]

    @pytest.mark.parametrize("k", range(1, 7))
    def test_recovers_k_primitives_with_full_coverage(self, k):
        cloud, parts = synthetic_cloud(k, points_per=5000, seed=k)
        obs = decompose_cloud(cloud, 0.3)
        assert len(obs) == k
        covered = np.zeros(len(cloud), dtype=bool)
        for o in obs:
            covered |= inside_hull(cloud.points, o.body.vertices)
        assert covered.all()

    def test_30k_points_under_5s(self):
        cloud, _ = synthetic_cloud(6, points_per=5000, seed=3)
        decompose_cloud(*synthetic_cloud(1, points_per=200)[:1], 0.3)  # warm caches
        t0 = time.perf_counter()
        obs = decompose_cloud(cloud, 0.3)
        assert time.perf_counter() - t0 < 5.0
        assert len(obs) == 6

    def test_deterministic(self):
        cloud, _ = synthetic_cloud(4, points_per=3000, seed=9)
        a = decompose_cloud(cloud, 0.3)
        b = decompose_cloud(cloud, 0.3)
        for oa, ob in zip(a, b):
            np.testing.assert_array_equal(oa.body.vertices, ob.body.vertices)

    def test_cloud_file_round_trip(self, tmp_path):
        cloud, _ = synthetic_cloud(2, points_per=100, seed=4)
        path = tmp_path / "c.xyz"
        save_cloud(cloud, path, comment="two primitives")
        again = load_cloud(path)
        np.testing.assert_allclose(again.points, cloud.points, atol=1e-6)

    def test_cloud_bad_columns(self, tmp_path):
        path = tmp_path / "bad.xyz"
        path.write_text("1 2\n3 4\n")
        with pytest.raises(SceneError):
            load_cloud(path)

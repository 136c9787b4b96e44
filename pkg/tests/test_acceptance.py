"""Acceptance checks, one per headline criterion.

Each test records a PASS/FAIL line with the measured values; the lines are
printed in the terminal summary (see conftest.py) and when the file is run
directly.
"""
import math
import time
from contextlib import contextmanager

import numpy as np
import pytest

from oracles import brute_force_distance, random_disjoint_pair
from sweptnav import cli
from sweptnav import tracker as trk
from sweptnav.geometry import Pose, RobotBody, separation_distance
from sweptnav.optimizer import CostConfig, interpolate_initial, optimize, surface_cost, validate
from sweptnav.scenarios import SCENARIOS, plan_scenario, planning_problem, replanner
from sweptnav.scene import (
    CLUTTERED_HALF_SEPARATION,
    CLUTTERED_PAIRS,
    CLUTTERED_PILLAR_RADIUS,
    Scene,
    builtin_scene,
    decompose_cloud_detailed,
    obstacles_union_contains,
    synthetic_cloud,
)
from sweptnav.simulator import SUCCESS, run_episode

# pinned tolerances
WINDOW_SEEDS = 20
WINDOW_RATE = 0.95
WINDOW_PLANE_BUDGET = 50
WINDOW_SECONDS = 30.0
CLEARANCE_TOL = 1e-3
LATERAL_FRACTION = 0.15
ROLL_TOL = 1e-9
TRAVERSE_M = 15.0
IDENTITY_TOL = 1e-6
EXACT_TOL = 1e-12
ORACLE_PAIRS = 500
ORACLE_TOL = 1e-5
DECOMP_POINTS = 5000
DECOMP_SECONDS = 5.0

ORDER = ("window", "pipes+cluttered", "pool", "optimizer properties", "surface cost unit suite",
         "depth and yaw unit suite", "geometry oracle", "decomposition", "determinism")
RESULTS: dict[str, tuple[bool, str]] = {}
CFG = CostConfig()
BODY = RobotBody()


@contextmanager
def criterion(name):
    info = {"detail": ""}
    try:
        yield info
    except BaseException:
        RESULTS[name] = (False, info["detail"])
        raise
    RESULTS[name] = (True, info["detail"])


def report_lines() -> list[str]:
    return [f"{'PASS' if RESULTS[n][0] else 'FAIL'} {n}: {RESULTS[n][1]}" for n in ORDER if n in RESULTS]


@pytest.fixture(scope="module")
def window_runs():
    runs = []
    for seed in range(WINDOW_SEEDS):
        t0 = time.perf_counter()
        rep = plan_scenario("window", seed=seed)
        runs.append((seed, rep, time.perf_counter() - t0))
    return runs


def test_window(window_runs):
    with criterion("window") as info:
        scene = builtin_scene("window")
        wall_x = {round(float(o.body.vertices[:, 0].mean()), 9) for o in scene.obstacles if o.tag == "front_wall"}
        start_x = SCENARIOS["window"].start[0]
        trapped = [not rep.attempts[0].converged for _, rep, _ in window_runs]
        ok = [rep.success and rep.plane_samples_used <= WINDOW_PLANE_BUDGET
              and all(a.kind in ("straight", "plane") for a in rep.attempts) for _, rep, _ in window_runs]
        clear = [rep.result.breakdown.min_clearance for (_, rep, _), good in zip(window_runs, ok) if good]
        worst_t = max(t for _, _, t in window_runs)
        rate = sum(ok) / len(ok)
        info["detail"] = (f"trapped {sum(trapped)}/{len(trapped)}, plane-phase successes {sum(ok)}/{len(ok)} "
                          f"(rate {rate:.2f} >= {WINDOW_RATE}), min planned clearance {min(clear):.5f} "
                          f">= {CFG.d_min - CLEARANCE_TOL}, wall at {sorted(wall_x)} m from x={start_x}, "
                          f"slowest seed {worst_t:.1f} s < {WINDOW_SECONDS} s")
        assert all(trapped)
        assert rate >= WINDOW_RATE
        assert min(clear) >= CFG.d_min - CLEARANCE_TOL
        assert wall_x == {8.6} and start_x == 0.0
        assert worst_t < WINDOW_SECONDS


def crossing_y(records, x):
    pts = np.array([[r["x"], r["y"]] for r in records])
    for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
        if (x0 - x) * (x1 - x) <= 0 and x1 != x0:
            return y0 + (x - x0) / (x1 - x0) * (y1 - y0)
    return math.nan


@pytest.fixture(scope="module")
def flown(scenario_plans):
    out = {}
    for name in ("pipes", "cluttered", "pool"):
        problem = planning_problem(name)
        out[name] = run_episode(problem.scene, scenario_plans[name].trajectory,
                                replan=replanner(problem, CFG))
    return out


def test_pipes_and_cluttered(scenario_plans, flown):
    with criterion("pipes+cluttered") as info:
        gap = 2 * (CLUTTERED_HALF_SEPARATION - CLUTTERED_PILLAR_RADIUS)
        limit = LATERAL_FRACTION * gap
        last = flown["cluttered"].runs[-1].records
        offsets = [float(crossing_y(last, x) - mid) for x, mid in CLUTTERED_PAIRS]
        parts = []
        for name in ("pipes", "cluttered"):
            tr = flown[name]
            parts.append(f"{name} plan={scenario_plans[name].success} sim={tr.outcome} "
                         f"exec clearance {tr.metrics['min_clearance']:.3f} > 0")
        info["detail"] = "; ".join(parts) + (f"; cluttered offsets from pair midpoints "
                                             f"{[round(o, 3) for o in offsets]} within +-{limit:.3f} m")
        for name in ("pipes", "cluttered"):
            assert scenario_plans[name].success
            assert flown[name].outcome == SUCCESS
            assert flown[name].metrics["min_clearance"] > 0.0
        assert all(abs(o) <= limit for o in offsets)


def test_pool(scenario_plans, flown):
    with criterion("pool") as info:
        rep, tr = scenario_plans["pool"], flown["pool"]
        rolls = [abs(float(w.euler[2])) for w in rep.trajectory.waypoints]
        recs = tr.runs[-1].records
        traverse = math.dist((recs[0]["x"], recs[0]["y"], recs[0]["z"]), (recs[-1]["x"], recs[-1]["y"], recs[-1]["z"]))
        v = tr.runs[-1].v
        info["detail"] = (f"roll_locked plan={rep.success}, max |roll| {max(rolls):.1e} <= {ROLL_TOL}, "
                          f"traverse {traverse:.2f} m >= {TRAVERSE_M}, outcome {tr.outcome} at v={v}, "
                          f"D_min={CFG.d_min}, coefficients {CFG.obstacle_coeff:g}/{CFG.length_coeff:g}")
        assert SCENARIOS["pool"].roll_locked and rep.success
        assert max(rolls) <= ROLL_TOL
        assert traverse >= TRAVERSE_M
        assert tr.outcome == SUCCESS and v == 0.4 and tr.metrics["retries"] == 0
        assert (CFG.d_min, CFG.obstacle_coeff, CFG.length_coeff) == (0.4, 200.0, 100.0)


def test_optimizer_properties(scenario_plans, window_runs):
    with criterion("optimizer properties") as info:
        results = [a.result for rep in scenario_plans.values() for a in rep.attempts]
        results += [a.result for _, rep, _ in window_runs for a in rep.attempts]
        scenes = [builtin_scene(n) for n in scenario_plans for _ in scenario_plans[n].attempts]
        scenes += [builtin_scene("window") for _, rep, _ in window_runs for _ in rep.attempts]
        mono_bad = 0
        for res in results:
            groups = {}
            for rec in res.log:
                if rec["accepted"]:
                    groups.setdefault(rec["outer"], []).append(rec["total"])
            mono_bad += sum(b > a for g in groups.values() for a, b in zip(g, g[1:]))
        converged = [(r, s) for r, s in zip(results, scenes) if r.converged]
        violations = sum(not validate(r.trajectory, s, BODY, CFG.d_min - CFG.clearance_slack).ok for r, s in converged)
        empty = Scene((), (np.array([-5.0, -5.0, -6.0]), np.array([15.0, 5.0, 0.0])))
        seed = interpolate_initial(Pose([0, 0, -2]), Pose([10, 0, -2]), CFG.n_waypoints)
        res = optimize(seed, empty, BODY, CFG)
        drift = max(float(np.abs(res.trajectory.positions - seed.positions).max()),
                    float(np.abs(res.trajectory.quaternions - seed.quaternions).max()))
        info["detail"] = (f"{len(results)} logged runs, {mono_bad} accepted-step increases, "
                          f"{violations} violations among {len(converged)} converged runs, "
                          f"empty-scene change {drift:.1e} <= {IDENTITY_TOL}")
        assert mono_bad == 0
        assert violations == 0 and converged
        assert drift <= IDENTITY_TOL


def test_surface_cost_suite():
    with criterion("surface cost unit suite") as info:
        table = [(-1.0, 0.0), (0.0, 0.01), (-0.2, -0.19)]
        errs = [abs(surface_cost(z, CFG) - want) for z, want in table]
        grid = np.round(np.arange(-1000, -39) * 0.01, 10)
        nonzero = sum(surface_cost(float(z), CFG) != 0.0 for z in grid)
        info["detail"] = (f"tabulated max error {max(errs):.1e} <= {EXACT_TOL}; {nonzero} nonzero of "
                          f"{len(grid)} grid points in [-10, -0.4] m")
        assert max(errs) <= EXACT_TOL
        assert nonzero == 0


def test_depth_and_yaw_suite():
    with criterion("depth and yaw unit suite") as info:
        depth_table = [((-2.0, -3.0, -2.0), -2.0), ((-2.0, -3.0, -1.0), -2.5), ((-2.0, -3.0, 0.0), -3.0),
                       ((-4.0, -2.0, -3.0), -3.5), ((-1.0, -1.0, -0.3), -1.0)]
        yaw_table = [((1, 1), math.pi / 4), ((-1, 1), 3 * math.pi / 4), ((-1, -1), -3 * math.pi / 4),
                     ((2, 0), 0.0), ((-2, 0), math.pi), ((0, 3), math.pi / 2), ((0, -3), -math.pi / 2)]
        errs = [abs(trk.desired_depth(*args) - want) for args, want in depth_table]
        errs += [abs(trk.desired_yaw(np.array([*e, 0.0])) - want) for e, want in yaw_table]
        xs = np.linspace(-5, 5, 100)
        worst = 0.0
        for x in xs:
            if abs(x) <= 1e-6:
                continue
            for y in xs:
                d = trk.desired_yaw(np.array([x, y, 0.0])) - math.atan2(y, x)
                worst = max(worst, abs(math.remainder(d, 2 * math.pi)))
        info["detail"] = (f"{len(errs)} substitutions, max error {max(errs):.1e} <= {EXACT_TOL}; "
                          f"100x100 grid vs atan2 max {worst:.1e} <= {EXACT_TOL}")
        assert max(errs) <= EXACT_TOL
        assert worst <= EXACT_TOL


def test_geometry_oracle():
    with criterion("geometry oracle") as info:
        rng = np.random.default_rng(2024)
        worst = 0.0
        for _ in range(ORACLE_PAIRS):
            a, b = random_disjoint_pair(rng)
            worst = max(worst, abs(separation_distance(a, b) - brute_force_distance(a.vertices, b.vertices)))
        info["detail"] = f"{ORACLE_PAIRS} disjoint pairs, max abs error {worst:.1e} <= {ORACLE_TOL}"
        assert worst <= ORACLE_TOL


def test_decomposition():
    with criterion("decomposition") as info:
        counts, coverage = [], []
        for k in range(1, 7):
            cloud, _ = synthetic_cloud(k, DECOMP_POINTS, seed=k)
            dec = decompose_cloud_detailed(cloud, 0.5)
            counts.append((k, len(dec.obstacles)))
            coverage.append(float(obstacles_union_contains(dec.obstacles, cloud.points).mean()))
        big, _ = synthetic_cloud(6, DECOMP_POINTS, seed=99)
        t0 = time.perf_counter()
        decompose_cloud_detailed(big, 0.5)
        seconds = time.perf_counter() - t0
        info["detail"] = (f"recovered {[n for _, n in counts]} for k=1..6, min coverage {min(coverage):.4f}, "
                          f"{len(big)} points in {seconds:.2f} s < {DECOMP_SECONDS} s")
        assert all(k == n for k, n in counts)
        assert min(coverage) == 1.0
        assert len(big) >= 30000 and seconds < DECOMP_SECONDS


def test_determinism(tmp_path):
    with criterion("determinism") as info:
        options = dict(cli.DEFAULTS, out=None, plots=False)
        names = list(SCENARIOS)
        code_a, _, table_a = cli.suite(names, options, tmp_path / "a")
        code_b, _, table_b = cli.suite(names, options, tmp_path / "b")
        info["detail"] = (f"suite exit codes {code_a}/{code_b}, {len(table_a.splitlines()) - 1} rows, "
                          f"tables identical={table_a == table_b}")
        assert table_a == table_b
        assert code_a == code_b == cli.EXIT_OK


if __name__ == "__main__":
    import sys

    code = pytest.main([__file__, "-q"])
    print("\n".join(report_lines()))
    sys.exit(code)

"""Start/goal presets for the builtin scenes."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

from sweptnav.correction import PlanningProblem, PlanReport, RestartConfig, plan_with_restarts
from sweptnav.geometry import Pose, RobotBody
from sweptnav.optimizer import CostConfig, Trajectory
from sweptnav.scene import Scene, builtin_scene


@dataclass(frozen=True)
class Scenario:
    name: str
    start: tuple[float, float, float]
    goal: tuple[float, float, float]
    roll_locked: bool = False
    seed: int = 0

    @property
    def s_init(self) -> Pose:
        return Pose(self.start)

    @property
    def s_goal(self) -> Pose:
        return Pose(self.goal)


SCENARIOS: dict[str, Scenario] = {
    "window": Scenario("window", (0.0, 0.0, -2.0), (12.0, 0.0, -2.0)),
    "pipes": Scenario("pipes", (0.0, 0.0, -2.5), (12.0, 0.0, -2.5)),
    "cluttered": Scenario("cluttered", (0.0, 0.0, -2.0), (14.0, 0.0, -2.0)),
    "pool": Scenario("pool", (4.0, 7.5, -1.5), (20.0, 7.5, -1.5), roll_locked=True, seed=7),
}


def planning_problem(name: str, scene: Scene | None = None, body: RobotBody = RobotBody()) -> PlanningProblem:
    sc = SCENARIOS[name]
    return PlanningProblem(scene if scene is not None else builtin_scene(name), body,
                           sc.s_init, sc.s_goal, sc.roll_locked)


def plan_scenario(name: str, cost_cfg: CostConfig = CostConfig(), seed: int | None = None,
                  scene: Scene | None = None) -> PlanReport:
    sc = SCENARIOS[name]
    rcfg = RestartConfig(rng_seed=sc.seed if seed is None else seed)
    return plan_with_restarts(planning_problem(name, scene), rcfg, cost_cfg)


def replanner(problem: PlanningProblem, cost_cfg: CostConfig = CostConfig(),
              restart_cfg: RestartConfig = RestartConfig()) -> Callable[[float], Trajectory | None]:
    """Retry hook for the simulator: replan with a reduced clearance margin."""

    def replan(d_min: float) -> Trajectory | None:
        report = plan_with_restarts(problem, restart_cfg, replace(cost_cfg, d_min=d_min))
        return report.trajectory if report.success else None

    return replan

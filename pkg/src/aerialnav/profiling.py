"""Per-stage latency of one replan cycle, and speedup arithmetic between reports."""
from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidInput
from .geometry import CameraModel
from .perception import backproject, build_anchors, detect_conflicts
from .policy import Observation
from .safety import RefineConfig, minimize, sample_command, verify
from .trajectory import BSplineTrajectory, reallocate_time
from .world import SimState, render_depth

STAGES = ("perception", "conflicts", "refinement", "reallocation", "policy", "control")


@dataclass(frozen=True)
class ProfileReport:
    stages: dict  # name -> milliseconds
    total: float  # milliseconds
    baseline: "ProfileReport | None" = None
    extra: dict = field(default_factory=dict)  # timings outside the cycle, e.g. rendering

    def __post_init__(self):
        values = list(self.stages.values())
        if any(not (v >= 0) for v in values) or not (self.total >= 0):
            raise InvalidInput("durations must be >= 0")
        if values and self.total < max(values):
            raise InvalidInput("total must be >= every stage")

    def table(self) -> list[tuple[str, float]]:
        return list(self.stages.items()) + [("total", self.total)]


def _ratio(before: float, after: float, name: str):
    if after == 0.0:
        if before == 0.0:
            return 1.0, 0.0
        raise InvalidInput(f"{name}: after-duration is zero")
    return before / after, 100.0 * (1.0 - after / before) if before else 0.0


def compute_speedup(before: ProfileReport, after: ProfileReport) -> dict:
    """Speedup factor and percent reduction, overall and per stage."""
    if set(before.stages) != set(after.stages):
        raise InvalidInput("reports have different stage names")
    if after.total == 0.0:
        raise InvalidInput("after total is zero")
    factor, percent = _ratio(before.total, after.total, "total")
    per_stage = {}
    for name in before.stages:
        f, p = _ratio(before.stages[name], after.stages[name], name)
        per_stage[name] = {"factor": f, "percent_reduction": p}
    return {"factor": factor, "percent_reduction": percent, "per_stage": per_stage}


def camera_640() -> CameraModel:
    """640x480 camera with the same field of view as the default model."""
    base = CameraModel()
    scale = 640 / base.width
    return CameraModel(640, 480, base.fx * scale, base.fy * scale, 319.5, 239.5, base.min_range, base.max_range)


@dataclass(frozen=True)
class ProfileConfig:
    camera: CameraModel | None = None  # None: scenario camera
    stride: int = 1
    voxel_size: float = 0.1
    horizon: float = 5.0
    control_points: int = 30
    iterations: int = 200
    refine: RefineConfig = field(default_factory=RefineConfig)
    refine_enabled: bool = True


def _straight(start, target, m: int, dt: float) -> BSplineTrajectory:
    start = np.asarray(start, dtype=float)
    target = np.asarray(target, dtype=float)
    inner = np.linspace(start, target, m - 4)
    q = np.vstack([start, start, inner, target, target])
    return BSplineTrajectory(q, dt)


def _cycle(scenario, policy, cfg: ProfileConfig, camera, depth, cam_pose):
    timer = time.perf_counter
    stages = {}
    state = SimState.at_rest(scenario.start)
    t_begin = timer()

    t0 = timer()
    cloud = backproject(depth, camera, cam_pose, cfg.stride, cfg.voxel_size, cfg.horizon)
    stages["perception"] = timer() - t0

    t0 = timer()
    decision = policy.decide(Observation(scenario.start, depth, scenario.instruction, 0.0))
    stages["policy"] = timer() - t0

    lim = scenario.limits
    target = decision.waypoint if decision else scenario.goals[0].position
    dist = float(np.linalg.norm(np.asarray(target) - state.position))
    dt = max(dist / (0.6 * lim.v_max * (cfg.control_points - 5)), 1e-3)
    traj = _straight(state.position, target, cfg.control_points, dt)

    t0 = timer()
    conflicts = detect_conflicts(traj, cloud, cfg.refine.s_clear)
    anchors = build_anchors(conflicts, traj.control_points, cloud.voxel_size)
    stages["conflicts"] = timer() - t0

    t0 = timer()
    q = traj.control_points
    steps = 0
    if cfg.refine_enabled:
        # fixed work: exactly ``iterations`` steps unless the line search stalls
        rc = replace(cfg.refine, max_iters=cfg.iterations, grad_tol=0.0, rel_tol=0.0)
        q, steps = minimize(q, anchors, dt, lim, rc)
    stages["refinement"] = timer() - t0

    t0 = timer()
    out = reallocate_time(traj.with_points(q), lim.v_max, lim.a_max)
    verify(out, cloud, cfg.refine)
    stages["reallocation"] = timer() - t0

    t0 = timer()
    sample_command(out, 0.0, decision.yaw if decision else 0.0, scenario.start.yaw, lim.yaw_rate_max, 1 / 30)
    stages["control"] = timer() - t0

    total = timer() - t_begin
    return {k: v * 1e3 for k, v in stages.items()}, total * 1e3, steps, len(anchors)


def profile_pipeline(scenario, policy, config: ProfileConfig | None = None, repetitions: int = 21) -> ProfileReport:
    """Median per-stage wall-clock milliseconds of one replan cycle from the scenario start.

    Rendering stands in for the sensor and is reported in ``extra`` rather
    than in the cycle total.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    cfg = config or ProfileConfig()
    camera = cfg.camera or scenario.camera
    cam_pose = camera.pose_in_world(scenario.start)
    t0 = time.perf_counter()
    depth = render_depth(scenario.world, camera, cam_pose)
    render_ms = (time.perf_counter() - t0) * 1e3

    _cycle(scenario, policy, cfg, camera, depth, cam_pose)  # warm caches and compiled kernels
    runs = [_cycle(scenario, policy, cfg, camera, depth, cam_pose) for _ in range(repetitions)]
    stages = {name: statistics.median(r[0][name] for r in runs) for name in STAGES}
    total = statistics.median(r[1] for r in runs)
    # medians of parts may exceed the median of the whole by noise; keep the invariant
    total = max(total, max(stages.values()))
    extra = {"render": render_ms, "points": _point_count(depth), "refine_steps": runs[-1][2],
             "anchors": runs[-1][3]}
    return ProfileReport(stages, total, extra=extra)


def _point_count(depth) -> int:
    return int(np.count_nonzero(depth.values > 0))


"""The twelve acceptance criteria, each at its stated tolerance.

Every test prints a one-line verdict; the terminal summary repeats them.
"""
import itertools
import math
import subprocess
import sys
import time

import numpy as np
import pytest
from conftest import record
from oracles import (EVENTS, STATES, brute_min_distance, central_difference, expected_transition, spline_dense,
                     spline_eval)

from aerialnav.datagen import compute_metrics, generate_scenarios, read_dataset, record_episode
from aerialnav.errors import Infeasible
from aerialnav.executor import Event, ExecState, ExecutorConfig, run_episode, step_state_machine
from aerialnav.geometry import (AxisAlignedBox, CameraModel, Pose4D, Sphere, VerticalCylinder,
                                signed_distance_many)
from aerialnav.perception import AnchorPair, backproject
from aerialnav.policy import LatencyModel, NoDecision, OraclePolicy
from aerialnav.profiling import ProfileConfig, ProfileReport, camera_640, compute_speedup, profile_pipeline
from aerialnav.safety import (RefineConfig, collision_cost_and_grad, feasibility_cost_and_grad, refine,
                              smoothness_cost_and_grad, total_cost_and_grad)
from aerialnav.scenario import Goal, Limits, ScenarioSpec
from aerialnav.scenarios import profile_scene, random_world, template
from aerialnav.trajectory import BSplineTrajectory, evaluate_many, init_straight, reallocate_time
from aerialnav.world import SimState, render_depth


def _rel(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


# ---------------------------------------------------------------------------
# 1. gradient exactness

def _random_anchors(rng, q, n):
    out = []
    for _ in range(n):
        i = int(rng.integers(3, len(q) - 3))
        v = rng.normal(size=3)
        v /= np.linalg.norm(v)
        # anchor placed so the control point sits inside the clearance band
        out.append(AnchorPair(q[i] - v * rng.uniform(0.05, 0.35), v, i))
    return out


def test_criterion_01_gradient_exactness():
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    cfg = RefineConfig()
    lim = Limits(v_max=1.0, a_max=1.0)
    worst = {"collision": 0.0, "smoothness": 0.0, "feasibility": 0.0, "total": 0.0}
    for _ in range(20):
        m = int(rng.integers(8, 16))
        dt = rng.uniform(0.2, 0.5)
        q = np.cumsum(rng.normal(scale=0.4, size=(m, 3)), axis=0)
        anchors = _random_anchors(rng, q, int(rng.integers(1, 6)))
        cases = {
            "collision": lambda x: collision_cost_and_grad(x, anchors, cfg.s_clear),
            "smoothness": smoothness_cost_and_grad,
            "feasibility": lambda x: feasibility_cost_and_grad(x, dt, lim.v_max, lim.a_max),
            "total": lambda x: total_cost_and_grad(x, anchors, dt, lim, cfg),
        }
        for name, fn in cases.items():
            _, g = fn(q)
            fd = central_difference(lambda x: fn(x)[0], q, 1e-6)
            assert np.linalg.norm(g) > 0, name  # every configuration exercises the term
            worst[name] = max(worst[name], _rel(g, fd))
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) < 1e-5 and elapsed < 5.0
    record(1, ok, f"max rel err {max(worst.values()):.2e} (< 1e-5), {elapsed:.2f} s (< 5 s)")
    assert ok, worst


# ---------------------------------------------------------------------------
# 2. safety soundness

KINDS = ("spheres", "corridor", "slalom", "blocking")


def _refine_case(rng, kind, cfg, lim):
    start = np.array([0.0, 0.0, 1.2])
    heading = rng.uniform(-math.pi, math.pi)
    length = rng.uniform(4.0, 6.0)
    goal = start + length * np.array([math.cos(heading), math.sin(heading), 0.0])
    world = random_world(kind, rng, start, goal)
    pose = Pose4D(*start, heading)
    camera = CameraModel()
    cam_pose = camera.pose_in_world(pose)
    cloud = backproject(render_depth(world, camera, cam_pose), camera, cam_pose)
    traj = init_straight(SimState.at_rest(pose), np.zeros(3), goal, lim, 0.3)
    try:
        out = refine(traj, cloud, cfg, lim)
    except Infeasible:
        return None, None
    _, pos, _, _ = spline_dense(out.control_points, out.dt, 0.01)
    return out, brute_min_distance(pos, cloud.points)


@pytest.mark.slow
def test_criterion_02_safety_soundness():
    rng = np.random.default_rng(2)
    cfg = RefineConfig()
    lim = Limits()
    t0 = time.perf_counter()
    violations = 0
    blocking_ok = blocking_n = refined = 0
    for i in range(500):
        kind = KINDS[i % 4]
        out, clearance = _refine_case(rng, kind, cfg, lim)
        if out is not None:
            refined += 1
            violations += clearance < cfg.s_min
        if kind == "blocking":
            blocking_n += 1
            blocking_ok += out is not None
    elapsed = time.perf_counter() - t0
    rate = blocking_ok / blocking_n
    ok = violations == 0 and rate >= 0.95 and elapsed < 120.0
    record(2, ok, f"{violations} violations in {refined} refined, blocking success {100 * rate:.1f}% "
                  f"(>= 95%), {elapsed:.1f} s (< 120 s)")
    assert ok


# ---------------------------------------------------------------------------
# 3. kinodynamic bounds

def test_criterion_03_kinodynamic_bounds():
    rng = np.random.default_rng(3)
    worst_v = worst_a = 0.0
    for _ in range(200):
        m = int(rng.integers(6, 20))
        q = np.cumsum(rng.normal(scale=rng.uniform(0.05, 2.0), size=(m, 3)), axis=0)
        traj = BSplineTrajectory(q, rng.uniform(0.05, 1.0))
        v_max, a_max = rng.uniform(0.3, 3.0), rng.uniform(0.3, 5.0)
        out = reallocate_time(traj, v_max, a_max)
        _, _, vel, acc = spline_dense(out.control_points, out.dt, 0.01)
        worst_v = max(worst_v, np.linalg.norm(vel, axis=1).max() / v_max)
        worst_a = max(worst_a, np.linalg.norm(acc, axis=1).max() / a_max)
    ok = worst_v <= 1 + 1e-9 and worst_a <= 1 + 1e-9
    record(3, ok, f"peak speed/v_max {worst_v:.12f}, peak accel/a_max {worst_a:.12f} (<= 1 + 1e-9)")
    assert ok


# ---------------------------------------------------------------------------
# 4. B-spline correctness

def test_criterion_04_bspline_correctness():
    rng = np.random.default_rng(4)
    worst_rep = 0.0
    worst_fd = 0.0
    for _ in range(50):
        m = int(rng.integers(6, 15))
        dt = rng.uniform(0.1, 1.0)
        t = rng.uniform(0.0, (m - 3) * dt, size=40)
        c = rng.normal(size=3)
        const = BSplineTrajectory(np.tile(c, (m, 1)), dt)
        pos, vel, acc, _ = evaluate_many(const, t)
        worst_rep = max(worst_rep, np.abs(pos - c).max(), np.abs(vel).max(), np.abs(acc).max())
        d = rng.normal(size=3)
        line = BSplineTrajectory(c + np.arange(m)[:, None] * d, dt)
        pos, vel, acc, _ = evaluate_many(line, t)
        expect = c + (1.0 + t / dt)[:, None] * d
        worst_rep = max(worst_rep, np.abs(pos - expect).max(), np.abs(vel - d / dt).max(), np.abs(acc).max())

        q = rng.normal(size=(m, 3))
        traj = BSplineTrajectory(q, dt)
        h = 1e-6 * dt
        inner = rng.uniform(h * 2, traj.duration - 2 * h, size=20)
        for ti in inner:
            p, v, a, _ = evaluate_many(traj, np.array([ti - h, ti, ti + h]))
            fd_v = (p[2] - p[0]) / (2 * h)
            fd_a = (v[2] - v[0]) / (2 * h)
            worst_fd = max(worst_fd, _rel(v[1], fd_v), _rel(a[1], fd_a))
            # and against the independent matrix-form evaluator
            op, ov, oa = spline_eval(q, dt, ti)
            worst_rep = max(worst_rep, np.abs(op - p[1]).max() / max(1.0, np.abs(op).max()))
    ok = worst_rep <= 1e-12 and worst_fd < 1e-5
    record(4, ok, f"reproduction err {worst_rep:.1e} (<= 1e-12), derivative rel err {worst_fd:.1e} (< 1e-5)")
    assert ok


# ---------------------------------------------------------------------------
# 5. sensor round trip

SCENES = (
    (Sphere((3.0, 0.2, 1.1), 0.7),),
    (AxisAlignedBox((2.0, -1.0, 0.0), (2.5, 1.0, 2.5)),),
    (VerticalCylinder((2.5, -0.4), 0.4, 0.0, 2.0),),
    (Sphere((2.0, 0.8, 1.0), 0.4), AxisAlignedBox((4.0, -3.0, 0.0), (4.3, 3.0, 3.0)),
     VerticalCylinder((3.0, -0.9), 0.3, 0.5, 1.5)),
)


def test_criterion_05_sensor_round_trip():
    rng = np.random.default_rng(5)
    camera = CameraModel()
    worst = 0.0
    total = 0
    for world in SCENES:
        for _ in range(3):
            pose = Pose4D(rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(0.8, 1.4),
                          rng.uniform(-0.3, 0.3))
            cam_pose = camera.pose_in_world(pose)
            depth = render_depth(world, camera, cam_pose)
            for voxel in (0.0, 0.1):
                cloud = backproject(depth, camera, cam_pose, stride=1, voxel_size=voxel)
                assert len(cloud) > 0
                err = np.abs(signed_distance_many(world, cloud.points))
                worst = max(worst, float(err.max()))
                total += len(cloud)
    ok = worst <= 1e-6
    record(5, ok, f"{total} points, worst surface distance {worst:.1e} m (<= 1e-6)")
    assert ok


# ---------------------------------------------------------------------------
# 6. asynchronous contract

class _Silent:
    def decide(self, obs):
        return NoDecision


def _hover_scenario(seconds):
    return ScenarioSpec(world=(), start=Pose4D(0.0, 0.0, 1.0, 0.0), goals=(Goal((4.0, 0.0, 1.0)),),
                        bounds=AxisAlignedBox((-2.0, -2.0, 0.0), (6.0, 2.0, 3.0)), name="hold",
                        timeout_s=seconds).validate()


def test_criterion_06_async_contract():
    latency = LatencyModel(seconds_per_token=0.02, output_tokens=20)
    assert latency.latency == pytest.approx(0.40)
    log = run_episode(_hover_scenario(60.0), _Silent(), ExecutorConfig(latency=latency, policy_rate=2.5,
                                                                      record_depth=False))
    ticks = [c.tick for c in log.commands]
    times = np.array([c.time for c in log.commands])
    on_grid = np.abs(times - np.arange(len(times)) / 30.0).max()
    ok = len(ticks) == 1801 and ticks == list(range(1801)) and on_grid <= 1e-12
    record(6, ok, f"{len(ticks)} command ticks (== 1801), gaps {1801 - len(set(ticks))}, grid err {on_grid:.0e}")
    assert ok


# ---------------------------------------------------------------------------
# 7. state machine

def test_criterion_07_state_machine():
    mismatches = 0
    for s in STATES:
        for e in EVENTS:
            mismatches += step_state_machine(ExecState[s], Event[e]).value != expected_transition(s, e)
    checked = leaks = 0
    for n in range(7):
        for seq in itertools.product(EVENTS, repeat=n):
            state = ExecState.IDLE
            for e in seq:
                state = step_state_machine(state, Event[e])
            checked += 1
            if state is ExecState.TASK_COMPLETE and "Complete" not in seq:
                leaks += 1
    ok = mismatches == 0 and leaks == 0
    record(7, ok, f"{len(STATES) * len(EVENTS)} table entries, {mismatches} mismatches; "
                  f"{checked} sequences, {leaks} reach TASK_COMPLETE without Complete")
    assert ok


# ---------------------------------------------------------------------------
# 8. end-to-end oracle suite

@pytest.mark.slow
def test_criterion_08_oracle_suite():
    cfg = ExecutorConfig(record_depth=False)
    ok_count = total = bad_success = 0
    for k, name in enumerate(("empty", "corridor", "slalom", "long-horizon")):
        for sc in generate_scenarios(template(name), 50, 800 + k):
            log = run_episode(sc, OraclePolicy(sc), cfg)
            m = compute_metrics(log, sc)
            total += 1
            ok_count += m.success
            bad_success += m.success and (m.collisions > 0 or m.min_clearance < 0)
    sr = ok_count / total
    ok = sr >= 0.95 and bad_success == 0 and total == 200
    record(8, ok, f"SR {100 * sr:.1f}% over {total} episodes (>= 95%), {bad_success} collisions among successes")
    assert ok


# ---------------------------------------------------------------------------
# 9. recording rate

def test_criterion_09_recording_rate(tmp_path):
    log = run_episode(_hover_scenario(30.0), _Silent(), ExecutorConfig())
    manifest = record_episode(log, tmp_path)
    ds = read_dataset(tmp_path)
    exact = len(ds.depth_paths) == 301 and ds.poses.shape[0] == 301 and manifest["frames"] == 301
    for i, f in enumerate(log.frames):
        exact &= np.array_equal(ds.depth(i), f.depth)
        row = np.array([f.time, *f.pose.position, f.pose.yaw, *f.velocity])
        exact &= np.array_equal(ds.poses[i], row)
    cmds = np.array([[c.tick, c.time, *c.position, *c.velocity, *c.acceleration, c.yaw, c.generation]
                     for c in log.commands])
    exact &= np.array_equal(ds.commands, cmds)
    record(9, bool(exact), f"{len(ds.depth_paths)} depth frames, {ds.poses.shape[0]} pose rows (== 301), "
                           f"round trip {'bit-exact' if exact else 'differs'}")
    assert exact


# ---------------------------------------------------------------------------
# 10. speedup arithmetic

def test_criterion_10_speedup_arithmetic():
    before = ProfileReport({"vit": 2350.0, "prefill": 550.0, "decode": 1000.0, "other": 200.0}, 4100.0)
    after = ProfileReport({"vit": 120.0, "prefill": 130.0, "decode": 230.0, "other": 14.0}, 494.0)
    s = compute_speedup(before, after)
    vit = s["per_stage"]["vit"]["factor"]
    ok = (abs(s["factor"] - 8.30) <= 0.05 and abs(s["percent_reduction"] - 87.9) <= 0.1
          and abs(vit - 19.6) <= 0.1)
    record(10, ok, f"total {s['factor']:.3f}x (8.30 +- 0.05), {s['percent_reduction']:.2f}% (87.9 +- 0.1), "
                   f"vit {vit:.2f}x (19.6 +- 0.1)")
    assert ok


# ---------------------------------------------------------------------------
# 11. latency budget

@pytest.mark.slow
def test_criterion_11_latency_budget():
    sc = profile_scene()
    cfg = ProfileConfig(camera=camera_640(), control_points=30, iterations=200)
    report = profile_pipeline(sc, OraclePolicy(sc), cfg, repetitions=21)
    ok = report.total < 50.0 and report.extra["refine_steps"] == 200
    record(11, ok, f"median cycle {report.total:.1f} ms (< 50) at 640x480, "
                   f"{report.extra['refine_steps']} refine steps, {report.extra['points']} depth points")
    assert ok


# ---------------------------------------------------------------------------
# 12. determinism

def test_criterion_12_determinism(tmp_path):
    outputs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        cmd = [sys.executable, "-m", "aerialnav.cli", "run", "scenarios/slalom.json", "--seed", "1234",
               "--out", str(out)]
        proc = subprocess.run(cmd, capture_output=True, text=True, cwd=_repo_root())
        assert proc.returncode in (0, 2), proc.stderr
        outputs.append((out / "episode.json").read_bytes())
    same = outputs[0] == outputs[1]
    record(12, same, f"two `run --seed 1234` logs of {len(outputs[0])} bytes are "
                     f"{'byte-identical' if same else 'different'}")
    assert same


def _repo_root():
    from pathlib import Path

    return Path(__file__).resolve().parent.parent

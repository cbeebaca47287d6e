"""Worked examples from the module contracts, one test per example where practical."""
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import spline_dense

from aerialnav.cli import main
from aerialnav.datagen import compute_metrics, generate_scenarios, record_episode
from aerialnav.episode import EpisodeLog, Frame
from aerialnav.errors import GenerationInfeasible, ValidationError
from aerialnav.executor import ExecutorConfig, run_episode
from aerialnav.geometry import (AxisAlignedBox, CameraModel, Pose4D, RigidTransform, Sphere,
                                pixel_to_camera_ray, ray_cast, signed_distance)
from aerialnav.perception import (AnchorPair, Conflict, LocalObstacleCloud, backproject, build_anchors,
                                  detect_conflicts, voxel_downsample)
from aerialnav.plot import render_svg
from aerialnav.policy import NavDecision, Observation, OraclePolicy, decide_toward, scripted_decide
from aerialnav.profiling import ProfileConfig, profile_pipeline
from aerialnav.safety import (RefineConfig, collision_cost_and_grad, feasibility_cost_and_grad, refine,
                              sample_command, smoothness_cost_and_grad)
from aerialnav.scenario import Goal, Limits, ScenarioSpec, load_scenario
from aerialnav.scenarios import empty_world, profile_scene
from aerialnav.trajectory import (BSplineTrajectory, derivative_control_points, evaluate, init_straight,
                                  reallocate_time)
from aerialnav.world import Command, DepthImage, SimState, check_collision, render_depth, step_plant


# -- geometry

def _box_surface_samples(lo, hi, n=201):
    g = np.linspace(0.0, 1.0, n)
    u, v = np.meshgrid(g, g)
    u, v = u.ravel(), v.ravel()
    faces = []
    for axis in range(3):
        a, b = [k for k in range(3) if k != axis]
        for side in (lo[axis], hi[axis]):
            f = np.empty((len(u), 3))
            f[:, axis] = side
            f[:, a] = lo[a] + u * (hi[a] - lo[a])
            f[:, b] = lo[b] + v * (hi[b] - lo[b])
            faces.append(f)
    return np.vstack(faces)


def test_box_corner_distance_against_surface_sampling():
    box = AxisAlignedBox((0, 0, 0), (1, 1, 1))
    p = np.array([2.0, 2.0, 2.0])
    brute = np.linalg.norm(_box_surface_samples(box.min, box.max) - p, axis=1).min()
    assert signed_distance((box,), p) == pytest.approx(math.sqrt(3))
    assert abs(signed_distance((box,), p) - brute) < 1e-3


def test_ray_examples():
    unit = (Sphere((0, 0, 0), 1.0),)
    assert ray_cast(unit, (-3, 0, 0), np.array([1.0, 0, 0]), 10) == pytest.approx(2.0)
    assert ray_cast((), (0, 0, 0), np.array([1.0, 0, 0]), 10) is None
    two = (Sphere((6, 0, 0), 1.0), Sphere((3, 0, 0), 0.5))
    # analytic: nearer sphere's entry point
    assert ray_cast(two, (0, 0, 0), np.array([1.0, 0, 0]), 10) == pytest.approx(2.5)


def test_pixel_ray_examples():
    cam = CameraModel(width=320, height=240, fx=100.0, fy=100.0, cx=159.5, cy=119.5)
    np.testing.assert_allclose(pixel_to_camera_ray(cam, cam.cx, cam.cy), [0, 0, 1])
    np.testing.assert_allclose(pixel_to_camera_ray(cam, cam.cx + cam.fx, cam.cy), np.array([1, 0, 1]) / math.sqrt(2))


# -- scenario

def test_missing_goals_names_field():
    doc = {"world": [], "start": [0, 0, 1, 0], "bounds": {"min": [-1, -1, 0], "max": [1, 1, 2]}}
    with pytest.raises(ValidationError) as err:
        load_scenario(json.dumps(doc))
    assert err.value.field == "goals"


# -- world

def test_render_empty_and_frontal_wall():
    cam = CameraModel()
    ident = RigidTransform(np.eye(3), np.zeros(3))
    assert not render_depth((), cam, ident).values.any()
    # optical z is world +z under the identity pose
    wall = (AxisAlignedBox((-50, -50, 5.0), (50, 50, 6.0)),)
    d = render_depth(wall, CameraModel(width=161, height=121, cx=80, cy=60), ident)
    assert d.values[60, 80] == 5.0


def test_render_sphere_per_pixel_analytic():
    cam = CameraModel()
    ident = RigidTransform(np.eye(3), np.zeros(3))
    c, r = np.array([0.2, -0.1, 3.0]), 1.0
    d = render_depth((Sphere(c, r),), cam, ident)
    rays = cam.ray_directions()
    b = rays @ c
    disc = b * b - (c @ c - r * r)
    t = np.where(disc >= 0, b - np.sqrt(np.maximum(disc, 0)), np.nan)
    z = t * rays[..., 2]
    hit = d.values > 0
    assert hit.sum() > 100
    assert np.abs(d.values[hit] - z[hit]).max() < 1e-6
    # every miss is a true miss or falls outside the valid range
    missed = z[~hit]
    assert not (np.isfinite(missed) & (missed >= cam.min_range) & (missed <= cam.max_range)).any()


def test_plant_examples():
    s0 = SimState.at_rest(Pose4D(1, 2, 3, 0.5))
    s1 = step_plant(s0, Command.hold(s0.pose), 0.05, 1.5)
    assert s1.pose == s0.pose and not s1.velocity.any() and s1.time == 0.05
    turn = step_plant(SimState.at_rest(Pose4D(0, 0, 1, 0)), Command(np.array([0, 0, 1.0]), np.zeros(3),
                                                                     np.zeros(3), -math.pi), 0.1, 1.5)
    assert abs(turn.pose.yaw) == pytest.approx(0.15)


def test_velocity_lag_fine_step():
    tau, v_cmd = 0.1, np.array([0.6, -0.3, 0.2])
    s = SimState.at_rest(Pose4D(0, 0, 1, 0))
    cmd = Command(np.zeros(3), v_cmd, np.zeros(3), 0.0)
    for k in range(1, 501):
        s = step_plant(s, cmd, 1e-3, 1.5, tau=tau, kp=0.0)
        if k % 50 == 0:
            t = k * 1e-3
            assert abs(np.linalg.norm(s.velocity - v_cmd) - np.linalg.norm(v_cmd) * math.exp(-t / tau)) < 1e-6


def test_collision_examples_and_sampling_oracle():
    unit = (Sphere((0, 0, 0), 1.0),)
    r = check_collision(unit, Pose4D(2, 0, 0, 0), 0.25)
    assert r.clearance == pytest.approx(0.75) and not r.collided
    r = check_collision(unit, Pose4D(1.1, 0, 0, 0), 0.25)
    assert r.clearance == pytest.approx(-0.15) and r.collided
    box = AxisAlignedBox((0, 0, 0), (1, 1, 1))
    surf = _box_surface_samples(box.min, box.max, 151)
    rng = np.random.default_rng(0)
    for _ in range(20):
        p = rng.uniform(-2, 3, size=3)
        if np.all((p > 0) & (p < 1)):
            continue
        brute = np.linalg.norm(surf - p, axis=1).min() - 0.2
        got = check_collision((box,), Pose4D(*p, 0.0), 0.2).clearance
        assert abs(got - brute) < 1e-3


# -- trajectory

def test_trajectory_examples():
    traj = init_straight(SimState.at_rest(Pose4D(0, 0, 0, 0)), np.zeros(3), [4, 0, 0], Limits(), 0.3)
    np.testing.assert_allclose(evaluate(traj, 0).position, 0, atol=1e-9)
    np.testing.assert_allclose(evaluate(traj, traj.duration).position, [4, 0, 0], atol=1e-9)
    q = np.zeros((6, 3))
    q[1] = [1, 0, 0]
    v, _ = derivative_control_points(BSplineTrajectory(q, 0.5))
    np.testing.assert_allclose(v[0], [2, 0, 0])
    np.testing.assert_allclose(v[3], 0)


def test_reallocation_examples():
    q = np.zeros((8, 3))
    q[:, 0] = np.arange(8) * 0.2  # |V| = 2 at dt 0.1, no acceleration
    out = reallocate_time(BSplineTrajectory(q, 0.1), 1.0, 100.0)
    assert out.dt == pytest.approx(0.2)
    q = np.zeros((8, 3))
    q[4, 0] = 0.08  # peak |A| = 2h/dt^2 = 16 while |V| = 0.8
    out = reallocate_time(BSplineTrajectory(q, 0.1), 10.0, 4.0)
    assert out.dt == pytest.approx(0.2)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_speed_never_exceeds_velocity_hull(seed):
    rng = np.random.default_rng(seed)
    q = rng.normal(size=(int(rng.integers(6, 12)), 3))
    traj = BSplineTrajectory(q, rng.uniform(0.1, 1.0))
    v, _ = derivative_control_points(traj)
    _, _, vel, _ = spline_dense(q, traj.dt, 0.02)
    assert np.linalg.norm(vel, axis=1).max() <= np.linalg.norm(v, axis=1).max() * (1 + 1e-12)


# -- perception

def test_single_pixel_backprojection():
    cam = CameraModel(width=161, height=121, cx=80, cy=60)
    values = np.zeros((121, 161))
    values[60, 80] = 2.0
    pose = RigidTransform.from_pose(Pose4D(1, 2, 3, 0.4))
    cloud = backproject(DepthImage(161, 121, values), cam, pose, stride=1, voxel_size=0.0)
    np.testing.assert_allclose(cloud.points, pose.apply(np.array([[0, 0, 2.0]])))
    assert len(backproject(DepthImage(161, 121, np.zeros((121, 161))), cam, pose)) == 0


def test_voxel_trivial_cases():
    assert len(voxel_downsample(np.array([[0.5, 0.5, 0.5]] * 2), 0.1)) == 1
    pts = np.array([[0, 0, 0], [1.05, 0, 0], [0, 1.05, 0]], dtype=float) + 0.05
    assert len(voxel_downsample(pts, 0.1)) == 3


def test_conflict_and_anchor_examples():
    q = np.zeros((8, 3))
    q[:, 0] = np.arange(8)
    traj = BSplineTrajectory(q, 0.3)
    cloud = LocalObstacleCloud(np.array([[3.0, 0.2, 0.0]]))
    (c,) = detect_conflicts(traj, cloud, 0.5)
    assert c.control_index == 3 and c.distance == pytest.approx(0.2)
    assert detect_conflicts(traj, LocalObstacleCloud.empty(), 0.5) == []
    q2 = np.zeros((8, 3))
    q2[3] = [0.2, 0, 0]
    (a,) = build_anchors([Conflict(3, np.zeros(3), 0.2)], q2)
    np.testing.assert_allclose(a.direction, [1, 0, 0])
    assert float((q2[3] - a.anchor) @ a.direction) == pytest.approx(0.2)
    # both Q and its predecessor on the anchor: fall back to +z
    (up,) = build_anchors([Conflict(3, np.zeros(3), 0.0)], np.zeros((8, 3)))
    np.testing.assert_allclose(up.direction, [0, 0, 1])


def test_wall_anchors_one_per_voxel_per_control_point():
    ys, zs = np.meshgrid(np.arange(-0.5, 0.5, 0.02), np.arange(0.5, 1.5, 0.02))
    wall = np.column_stack([np.full(ys.size, 2.0), ys.ravel(), zs.ravel()])
    q = np.column_stack([np.linspace(0, 4, 12), np.zeros(12), np.ones(12)])
    conflicts = []
    for i in range(3, 9):
        d = np.linalg.norm(wall - q[i], axis=1)
        conflicts += [Conflict(i, p, float(dd)) for p, dd in zip(wall[d < 0.6], d[d < 0.6])]
    anchors = build_anchors(conflicts, q)
    want = {(c.control_index, tuple(np.floor(c.nearest_point / 0.1).astype(int))) for c in conflicts}
    assert len(anchors) == len(want)


def test_nearest_on_ten_thousand_points():
    from aerialnav.spatial import SpatialHashGrid

    rng = np.random.default_rng(11)
    pts = rng.uniform(0, 2, size=(10_000, 3))
    qs = rng.uniform(0, 2, size=(100, 3))
    dist, idx = SpatialHashGrid(pts, 0.2).nearest(qs)
    full = np.linalg.norm(qs[:, None] - pts[None], axis=2)
    np.testing.assert_allclose(dist, full.min(axis=1))
    np.testing.assert_array_equal(idx, full.argmin(axis=1))


# -- safety

def test_cost_examples():
    q = np.zeros((8, 3))
    q[4] = [0.2, 0, 0]
    c, g = collision_cost_and_grad(q, [AnchorPair(np.zeros(3), np.array([1.0, 0, 0]), 4)], 0.5)
    assert c == pytest.approx(0.027) and g[4] == pytest.approx([-0.27, 0, 0])
    c, g = collision_cost_and_grad(q, [AnchorPair(np.zeros(3), np.array([1.0, 0, 0]), 4)], 0.2)
    assert c == 0 and not g.any()
    c, _ = smoothness_cost_and_grad(np.array([[0, 0, 0], [1, 0, 0], [2, 1, 0]], dtype=float))
    assert c == pytest.approx(1.0)
    c, g = feasibility_cost_and_grad(np.array([[0, 0, 0], [0.5, 0, 0], [1, 0, 0]], dtype=float), 1.0, 1.0, 1.0)
    assert c == 0 and not g.any()
    # |V|^2 = v_max^2 + 1 with v_max = 1: V = (sqrt 2, 0, 0)
    q = np.array([[0, 0, 0], [math.sqrt(2), 0, 0], [2 * math.sqrt(2), 0, 0]])
    c, _ = feasibility_cost_and_grad(q, 1.0, 1.0, 100.0)
    assert c == pytest.approx(2.0)  # two velocity points, one each


def test_refine_empty_cloud_is_a_no_op():
    traj = init_straight(SimState.at_rest(Pose4D(0, 0, 1, 0)), np.zeros(3), [3, 0, 1], Limits(), 0.3)
    out = refine(traj, LocalObstacleCloud.empty(), RefineConfig(), Limits())
    np.testing.assert_array_equal(out.control_points, traj.control_points)


def test_sample_command_examples():
    traj = init_straight(SimState(Pose4D(0, 0, 1, 0), np.array([0.2, 0, 0])), np.zeros(3), [3, 0, 1], Limits(),
                         0.3, start_time=4.0)
    cmd = sample_command(traj, 4.0, 0.3, 0.3, 1.5, 1 / 30)
    np.testing.assert_allclose(cmd.position, [0, 0, 1], atol=1e-12)
    np.testing.assert_allclose(cmd.velocity, [0.2, 0, 0], atol=1e-12)
    assert cmd.yaw == 0.3


# -- policy

def test_policy_examples():
    goal = Goal((0.0, 0.0, 1.0), yaw=0.2)
    assert decide_toward(Pose4D(0, 0, 1, 0.2), goal).complete
    far = decide_toward(Pose4D(0, 0, 1, 0), Goal((12.0, 0.0, 1.0)))
    assert far.waypoint == pytest.approx((5.0, 0.0, 1.0)) and not far.complete
    diag = decide_toward(Pose4D(0, 0, 1, 0), Goal((3.0, 3.0, 1.0)))
    assert diag.yaw == pytest.approx(math.pi / 4)
    subs = (Goal((0, 0, 1)), Goal((4, 0, 1)))
    d, progress = scripted_decide(Observation(Pose4D(0, 0, 1, 0)), subs, 0)
    assert progress == 1 and d.waypoint == pytest.approx((4, 0, 1)) and not d.complete
    d, progress = scripted_decide(Observation(Pose4D(4, 0, 1, 0)), subs, 1)
    assert d.complete and progress == 1


def test_scripted_progress_never_skips():
    rng = np.random.default_rng(5)
    for _ in range(1000):
        subs = tuple(Goal(tuple(rng.uniform(-3, 3, size=3))) for _ in range(int(rng.integers(1, 5))))
        progress = 0
        for _ in range(8):
            # half the time stand on the current subgoal, else anywhere
            if rng.random() < 0.5:
                p = subs[min(progress, len(subs) - 1)].position
            else:
                p = rng.uniform(-3, 3, size=3)
            before = progress
            _, progress = scripted_decide(Observation(Pose4D(*p, 0.0)), subs, progress)
            assert progress in (before, before + 1)
            if progress == before + 1:
                assert np.linalg.norm(np.asarray(p) - subs[before].position_array) <= subs[before].success_radius


def test_non_finite_waypoint_rejected():
    with pytest.raises(ValueError):
        NavDecision((0, float("nan"), 0), 0.0)


# -- datagen and metrics

def test_generation_inside_obstacle_is_infeasible():
    tpl = ScenarioSpec(world=(AxisAlignedBox((-5, -5, -5), (5, 5, 5)),), start=Pose4D(0, 0, 1, 0),
                       goals=(Goal((1, 0, 1)),), bounds=AxisAlignedBox((-1, -1, 0), (2, 1, 2)))
    with pytest.raises(GenerationInfeasible) as err:
        generate_scenarios(tpl, 3, 0)
    assert err.value.index == 0


def test_immediate_completion_records_one_frame(tmp_path):
    sc = ScenarioSpec(world=(), start=Pose4D(0, 0, 1, 0), goals=(Goal((0.1, 0, 1)),),
                      bounds=AxisAlignedBox((-1, -1, 0), (1, 1, 2))).validate()
    log = EpisodeLog("instant", 0, 30.0, 2.5, outcome="Success", duration=0.0)
    log.frames.append(Frame(0, 0.0, sc.start, [0.0, 0.0, 0.0]))
    assert record_episode(log, tmp_path, sc)["frames"] == 1


def test_straight_flight_path_length():
    sc = empty_world()
    log = run_episode(sc, OraclePolicy(sc), ExecutorConfig(record_depth=False))
    m = compute_metrics(log, sc)
    # goal radius lets the flight stop up to half a metre short
    assert 3.5 - 0.01 <= m.path_length <= 4.0 + 0.01
    assert m.success and m.collisions == 0


def test_dataset_manifest_is_byte_identical(tmp_path):
    for k in range(2):
        sc = generate_scenarios(empty_world(), 1, 4)[0]
        log = run_episode(sc, OraclePolicy(sc), ExecutorConfig(record_depth=False))
        record_episode(log, tmp_path / str(k), sc)
    assert (tmp_path / "0" / "manifest.json").read_bytes() == (tmp_path / "1" / "manifest.json").read_bytes()


# -- profiling

def test_profile_structure_and_refine_toggle():
    sc = profile_scene()
    one = profile_pipeline(sc, OraclePolicy(sc), ProfileConfig(iterations=50), repetitions=1)
    many = profile_pipeline(sc, OraclePolicy(sc), ProfileConfig(iterations=50), repetitions=11)
    assert set(one.stages) == set(many.stages)
    off = profile_pipeline(sc, OraclePolicy(sc), ProfileConfig(refine_enabled=False), repetitions=5)
    assert off.stages["refinement"] < 0.05 and off.extra["refine_steps"] == 0


# -- cli

def test_cli_seed_repeat_prints_identical_metrics(tmp_path, capsys):
    path = tmp_path / "e.json"
    from aerialnav.scenario import dump_scenario

    path.write_text(dump_scenario(empty_world()))
    outs = []
    for k in range(2):
        assert main(["run", str(path), "--seed", "5", "--out", str(tmp_path / str(k))]) == 0
        outs.append(capsys.readouterr().out)
    assert outs[0] == outs[1]


def test_suite_of_ten_solvable(tmp_path):
    manifest = tmp_path / "m.json"
    manifest.write_text(json.dumps([{"category": "open", "template": "empty", "count": 10, "seed": 21}]))
    assert main(["suite", str(manifest), "--out", str(tmp_path / "s.csv")]) == 0
    row = (tmp_path / "s.csv").read_text().splitlines()[1].split(",")
    assert row[:3] == ["open", "10", "100.0"]


def test_empty_world_plot_has_one_polyline():
    sc = empty_world()
    log = run_episode(sc, OraclePolicy(sc), ExecutorConfig(record_depth=False))
    assert log.replan_count() == 0
    assert render_svg(log).count("<polyline") == 1

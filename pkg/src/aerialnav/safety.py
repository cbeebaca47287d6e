"""Anchored repulsive-gradient trajectory refinement and command sampling.

Control points are the decision variables.  The total cost is

    w_smooth * sum |Q[i+2] - 2 Q[i+1] + Q[i]|^2
  + w_collision * sum_anchors (s_clear - d)^3        for d = (Q[i] - p) . v < s_clear
  + w_feasibility * sum max(0, |V|^2 - v_max^2)^3 + max(0, |A|^2 - a_max^2)^3

minimized over the free control points by gradient descent with Armijo
backtracking.  Output is accepted only after a dense clearance check, so a
returned trajectory is never closer than ``s_min`` to the obstacle cloud.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import Infeasible, InvalidInput
from .geometry import wrap_yaw
from .perception import build_anchors, detect_conflicts, free_indices
from .trajectory import BSplineTrajectory, derivative_control_points, evaluate_many, reallocate_time
from .world import Command

try:
    from . import _kernels
except ImportError:  # numba missing: fall back to the numpy objective
    _kernels = None

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RefineConfig:
    s_clear: float = 0.4
    s_min: float = 0.2
    w_smooth: float = 1.0
    w_collision: float = 100.0
    w_feasibility: float = 10.0
    max_iters: int = 200
    max_outer_rounds: int = 5
    grad_tol: float = 1e-4
    rel_tol: float = 1e-8
    init_step: float = 0.1
    shrink: float = 0.5
    armijo_c: float = 1e-4
    verify_spacing: float = 0.01
    detour_margin: float = 1.25  # multiple of s_clear kept by detour seeds
    vertical_penalty: float = 1.0

    def __post_init__(self):
        if not (0 < self.s_min < self.s_clear):
            raise InvalidInput("need 0 < s_min < s_clear")
        if min(self.w_smooth, self.w_collision, self.w_feasibility) < 0:
            raise InvalidInput("weights must be >= 0")


# ---------------------------------------------------------------------------
# cost terms (full control-point arrays in, gradient per control point out)

def _anchor_arrays(anchors):
    if not anchors:
        return np.zeros(0, dtype=int), np.zeros((0, 3)), np.zeros((0, 3))
    idx = np.array([a.owner_index for a in anchors], dtype=int)
    p = np.array([a.anchor for a in anchors], dtype=float)
    v = np.array([a.direction for a in anchors], dtype=float)
    return idx, p, v


def collision_cost_and_grad(control_points, anchors, s_clear: float):
    q = np.asarray(control_points, dtype=float)
    idx, p, v = _anchor_arrays(anchors)
    grad = np.zeros_like(q)
    if len(idx) == 0:
        return 0.0, grad
    d = np.einsum("ij,ij->i", q[idx] - p, v)
    pen = np.maximum(s_clear - d, 0.0)
    np.add.at(grad, idx, (-3.0 * pen * pen)[:, None] * v)
    return float(np.sum(pen ** 3)), grad


def smoothness_cost_and_grad(control_points):
    q = np.asarray(control_points, dtype=float)
    if len(q) < 3:
        raise InvalidInput("need at least 3 control points")
    d = q[2:] - 2.0 * q[1:-1] + q[:-2]
    grad = np.zeros_like(q)
    grad[:-2] += 2.0 * d
    grad[1:-1] -= 4.0 * d
    grad[2:] += 2.0 * d
    return float(np.sum(d * d)), grad


def feasibility_cost_and_grad(control_points, dt: float, v_max: float, a_max: float):
    if not dt > 0:
        raise InvalidInput("dt must be > 0")
    q = np.asarray(control_points, dtype=float)
    grad = np.zeros_like(q)
    v = np.diff(q, axis=0) / dt
    hv = np.maximum(np.sum(v * v, axis=1) - v_max * v_max, 0.0)
    gv = (6.0 * hv * hv)[:, None] * v / dt
    grad[1:] += gv
    grad[:-1] -= gv
    a = (q[2:] - 2.0 * q[1:-1] + q[:-2]) / (dt * dt)
    ha = np.maximum(np.sum(a * a, axis=1) - a_max * a_max, 0.0)
    ga = (6.0 * ha * ha)[:, None] * a / (dt * dt)
    grad[:-2] += ga
    grad[1:-1] -= 2.0 * ga
    grad[2:] += ga
    return float(np.sum(hv ** 3) + np.sum(ha ** 3)), grad


def total_cost_and_grad(control_points, anchors, dt, limits, config: RefineConfig):
    cs, gs = smoothness_cost_and_grad(control_points)
    cc, gc = collision_cost_and_grad(control_points, anchors, config.s_clear)
    cf, gf = feasibility_cost_and_grad(control_points, dt, limits.v_max, limits.a_max)
    cost = config.w_smooth * cs + config.w_collision * cc + config.w_feasibility * cf
    return cost, config.w_smooth * gs + config.w_collision * gc + config.w_feasibility * gf


class _Objective:
    """Same cost as ``total_cost_and_grad`` with anchors and difference operators
    precomputed for the inner loop."""

    def __init__(self, num_points, anchors, dt, limits, config: RefineConfig):
        m = num_points
        self.first = np.eye(m - 1, m, 1) - np.eye(m - 1, m)
        self.second = np.eye(m - 2, m, 2) - 2.0 * np.eye(m - 2, m, 1) + np.eye(m - 2, m)
        self.idx, self.p, self.v = _anchor_arrays(anchors)
        self.scatter = np.zeros((m, len(self.idx)))
        self.scatter[self.idx, np.arange(len(self.idx))] = 1.0
        self.inv_dt = 1.0 / dt
        self.inv_dt2 = 1.0 / (dt * dt)
        self.v2 = limits.v_max ** 2
        self.a2 = limits.a_max ** 2
        self.cfg = config
        self.w_coll_grad = -3.0 * config.w_collision * self.v
        self.w_v = 6.0 * config.w_feasibility * self.inv_dt
        self.w_a = 6.0 * config.w_feasibility * self.inv_dt2

    def __call__(self, q, need_grad=True):
        cfg = self.cfg
        d2 = self.second @ q
        v = (self.first @ q) * self.inv_dt
        a = d2 * self.inv_dt2
        hv = np.maximum((v * v).sum(1) - self.v2, 0.0)
        ha = np.maximum((a * a).sum(1) - self.a2, 0.0)
        if len(self.idx):
            pen = np.maximum(cfg.s_clear - ((q[self.idx] - self.p) * self.v).sum(1), 0.0)
            pen2 = pen * pen
            coll = float(pen @ pen2)
        else:
            coll = 0.0
        cost = (cfg.w_smooth * float((d2 * d2).sum()) + cfg.w_collision * coll
                + cfg.w_feasibility * float(hv @ (hv * hv) + ha @ (ha * ha)))
        if not need_grad:
            return cost, None
        s = (2.0 * cfg.w_smooth) * d2 + (self.w_a * ha * ha)[:, None] * a
        grad = self.second.T @ s + self.first.T @ ((self.w_v * hv * hv)[:, None] * v)
        if len(self.idx):
            grad += self.scatter @ (pen2[:, None] * self.w_coll_grad)
        return cost, grad


@dataclass
class RefineTrace:
    """Optional diagnostics collected by ``refine``."""

    rounds: int = 0
    seeds_tried: list = field(default_factory=list)
    cost_history: list = field(default_factory=list)  # one list of accepted costs per round
    anchors: int = 0
    iterations: int = 0


def _minimize_numpy(q, anchors, dt, limits, config: RefineConfig, history):
    free = slice(3, len(q) - 3)
    objective = _Objective(len(q), anchors, dt, limits, config)
    f, g = objective(q)
    history.append(f)
    step = config.init_step
    for _ in range(config.max_iters):
        gf = g[free]
        if not gf.size or float(np.abs(gf).max()) < config.grad_tol:
            break
        gg = float((gf * gf).sum())
        # warm start from the last accepted step, never above init_step
        step = min(config.init_step, 2.0 * step)
        trial = q.copy()
        while True:
            trial[free] = q[free] - step * gf
            fn, _ = objective(trial, need_grad=False)
            if fn <= f - config.armijo_c * step * gg:
                break
            step *= config.shrink
            if step < 1e-14:
                return q
        rel = (f - fn) / max(abs(f), 1e-300)
        q = trial
        f, g = objective(q)
        history.append(f)
        if rel < config.rel_tol:
            break
    return q


def _minimize_compiled(q, anchors, dt, limits, config: RefineConfig, history):
    idx, p, v = _anchor_arrays(anchors)
    buf = np.empty(config.max_iters + 1)
    n = _kernels.descend(q, idx.astype(np.int64), p, v, config.s_clear, config.w_smooth, config.w_collision,
                         config.w_feasibility, 1.0 / dt, limits.v_max ** 2, limits.a_max ** 2,
                         config.max_iters, config.grad_tol, config.rel_tol, config.init_step, config.shrink,
                         config.armijo_c, buf)
    history.extend(buf[:n].tolist())
    return q


def minimize(control_points, anchors, dt, limits, config: RefineConfig, history=None, backend="auto"):
    """Armijo gradient descent on the free control points (all but the first and last three).

    Returns the new control points and the number of accepted steps.
    ``backend`` selects the compiled kernel or the numpy reference.
    """
    q = np.array(control_points, dtype=float)
    hist = [] if history is None else history
    n0 = len(hist)
    use_kernel = backend == "compiled" or (backend == "auto" and _kernels is not None)
    if use_kernel:
        q = _minimize_compiled(q, anchors, dt, limits, config, hist)
    else:
        q = _minimize_numpy(q, anchors, dt, limits, config, hist)
    return q, len(hist) - n0 - 1


# ---------------------------------------------------------------------------
# verification

def dense_samples(traj: BSplineTrajectory, spacing: float = 0.01) -> np.ndarray:
    """Positions sampled so consecutive samples are at most ``spacing`` apart along the path.

    The velocity hull bounds speed, so a time step of spacing / max|V_i|
    never advances more than ``spacing`` of arc length.
    """
    v, _ = derivative_control_points(traj)
    v_peak = float(np.max(np.linalg.norm(v, axis=1)))
    if v_peak == 0.0:
        return traj.control_points[:1].copy()
    n = max(2, math.ceil(traj.duration * v_peak / spacing) + 1)
    pos, _, _, _ = evaluate_many(traj, np.linspace(0.0, traj.duration, n))
    return pos


def min_cloud_distance(traj, cloud, radius: float, spacing: float = 0.01) -> float:
    """Smallest distance from the dense path to the cloud, or inf if nothing is within ``radius``."""
    if len(cloud) == 0:
        return math.inf
    dist, _ = cloud.grid(radius).nearest(dense_samples(traj, spacing))
    return float(dist.min())


def verify(traj, cloud, config: RefineConfig) -> bool:
    return min_cloud_distance(traj, cloud, config.s_min, config.verify_spacing) >= config.s_min


# ---------------------------------------------------------------------------
# detour seeds

def _clear_offset(w, n, margin):
    """Smallest shift along unit ``n`` keeping every lateral offset ``w`` at least ``margin`` away."""
    wn = w @ n
    disc = wn * wn - np.einsum("ij,ij->i", w, w) + margin * margin
    blocking = disc > 0
    if not blocking.any():
        return 0.0, blocking
    root = np.sqrt(disc[blocking])
    lo, hi = wn[blocking] - root, wn[blocking] + root
    order = np.argsort(lo, kind="stable")
    delta = 0.0
    for a, b in zip(lo[order], hi[order]):
        if a > delta:
            break
        if b > delta:
            delta = float(b)
    touched = np.zeros(len(w), dtype=bool)
    touched[np.nonzero(blocking)[0]] = (lo < delta) & (hi > 0.0)
    return delta, touched


def detour_seeds(control_points, cloud, config: RefineConfig, lateral_window: float = 3.0):
    """Candidate initial guesses that shift the blocked stretch sideways around the cloud.

    Returns ``(points, shift, reach)`` tuples, cheapest first, where ``reach``
    is a detection radius large enough to anchor the shifted control points.
    """
    q = np.asarray(control_points, dtype=float)
    a, b = q[2], q[-3]
    axis = b - a
    length = float(np.linalg.norm(axis))
    if length < 1e-6 or len(cloud) == 0:
        return []
    e = axis / length
    h = np.cross(e, [0.0, 0.0, 1.0])
    if np.linalg.norm(h) < 1e-6:
        h = np.cross(e, [1.0, 0.0, 0.0])
    h /= np.linalg.norm(h)
    up = np.cross(h, e)
    margin = config.detour_margin * config.s_clear
    rel = cloud.points - a
    s = rel @ e
    w = rel - s[:, None] * e
    near = (s > -margin) & (s < length + margin) & (np.linalg.norm(w, axis=1) < lateral_window)
    if not near.any():
        return []
    s, w = s[near], w[near]
    candidates = []
    for k in range(8):
        theta = k * math.pi / 4.0
        n = math.cos(theta) * h + math.sin(theta) * up
        delta, touched = _clear_offset(w, n, margin)
        if delta <= 0.0:
            continue
        cost = delta * (1.0 + config.vertical_penalty * abs(math.sin(theta)))
        candidates.append((cost, k, n, delta, float(s[touched].min()), float(s[touched].max())))
    candidates.sort(key=lambda c: (c[0], c[1]))
    seeds = []
    ramp = max(margin, 0.5)
    for _, _, n, delta, s_lo, s_hi in candidates:
        seeded = q.copy()
        for j in free_indices(len(q)):
            sj = float((q[j] - a) @ e)
            gap = max(s_lo - margin - sj, sj - s_hi - margin, 0.0)
            if gap < ramp:
                weight = 0.5 * (1.0 + math.cos(math.pi * gap / ramp))
                seeded[j] = q[j] + weight * delta * n
        seeds.append((seeded, delta, delta + config.s_clear))
    return seeds


# ---------------------------------------------------------------------------
# refinement

def refine(traj: BSplineTrajectory, cloud, config: RefineConfig, limits, trace: RefineTrace | None = None,
           admissible=None):
    """Push the trajectory away from the obstacle cloud and re-time it.

    Raises ``Infeasible`` when no candidate passes the dense ``s_min`` check.
    The first and last three control points are never moved.  ``admissible``
    is an optional extra acceptance test on the re-timed candidate.
    """
    def accept(candidate):
        return verify(candidate, cloud, config) and (admissible is None or admissible(candidate))

    trace = trace if trace is not None else RefineTrace()
    conflicts = detect_conflicts(traj, cloud, config.s_clear)
    if not conflicts:
        out = reallocate_time(traj, limits.v_max, limits.a_max)
        if accept(out):
            return out
        raise Infeasible("no free control point in conflict, but the path is not acceptable")

    plain = (traj.control_points, 0.0, None)
    detours = detour_seeds(traj.control_points, cloud, config)
    seeds = [plain] + detours if verify(traj, cloud, config) else detours + [plain]

    rounds = 0
    for points, shift, reach in seeds:
        if rounds >= config.max_outer_rounds:
            break
        q = np.array(points, dtype=float)
        trace.seeds_tried.append(shift)
        anchors = []
        if reach is not None:
            seeded = traj.with_points(q)
            anchors = build_anchors(detect_conflicts(seeded, cloud, reach), q, cloud.voxel_size)
        while rounds < config.max_outer_rounds:
            rounds += 1
            candidate = traj.with_points(q)
            anchors = build_anchors(detect_conflicts(candidate, cloud, config.s_clear), q,
                                    cloud.voxel_size, existing=anchors)
            history = []
            q, iters = minimize(q, anchors, traj.dt, limits, config, history)
            trace.cost_history.append(history)
            trace.iterations += iters
            trace.anchors = len(anchors)
            out = reallocate_time(traj.with_points(q), limits.v_max, limits.a_max)
            if accept(out):
                trace.rounds = rounds
                return out
            fresh = build_anchors(detect_conflicts(out, cloud, config.s_clear), q, cloud.voxel_size,
                                  existing=anchors)
            if len(fresh) == len(anchors):
                break
    trace.rounds = rounds
    raise Infeasible(f"no verified trajectory after {rounds} rounds")


def sample_command(traj: BSplineTrajectory, t: float, desired_yaw: float, previous_yaw: float,
                   yaw_rate_max: float, dt: float) -> Command:
    """Tracking command at absolute time ``t`` with yaw slewed toward ``desired_yaw``."""
    if not dt > 0:
        raise InvalidInput("dt must be > 0")
    local = t - traj.start_time
    pos, vel, acc, _ = evaluate_many(traj, np.array([local]))
    pos, vel, acc = pos[0], vel[0], acc[0]
    if local > traj.duration:
        vel = np.zeros(3)
        acc = np.zeros(3)
    delta = wrap_yaw(desired_yaw - previous_yaw)
    limit = yaw_rate_max * dt
    yaw = wrap_yaw(previous_yaw + min(max(delta, -limit), limit))
    return Command(pos, vel, acc, yaw, t)

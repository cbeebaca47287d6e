"""Uniform cubic B-spline trajectories over 3D control points."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np

from .errors import InvalidInput

DEGREE = 3
NOMINAL_SPEED_FRACTION = 0.6


@dataclass(frozen=True)
class BSplineTrajectory:
    control_points: np.ndarray  # (M, 3)
    dt: float
    start_time: float = 0.0

    def __post_init__(self):
        q = np.array(self.control_points, dtype=float)
        if q.ndim != 2 or q.shape[1] != 3 or q.shape[0] < 6:
            raise InvalidInput("need at least 6 control points of dimension 3")
        if not np.all(np.isfinite(q)):
            raise InvalidInput("control points must be finite")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise InvalidInput("knot span must be > 0")
        q.setflags(write=False)
        object.__setattr__(self, "control_points", q)

    @property
    def num_points(self) -> int:
        return self.control_points.shape[0]

    @property
    def duration(self) -> float:
        return (self.num_points - DEGREE) * self.dt

    @property
    def end_time(self) -> float:
        return self.start_time + self.duration

    def with_points(self, points) -> "BSplineTrajectory":
        return replace(self, control_points=points)

    @cached_property
    def _derivative_points(self):
        q = self.control_points
        v = np.diff(q, axis=0) / self.dt
        a = (q[2:] - 2.0 * q[1:-1] + q[:-2]) / self.dt ** 2
        return v, a


@dataclass(frozen=True)
class Evaluation:
    position: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray
    clamped: bool = False


def _basis(u):
    u2 = u * u
    u3 = u2 * u
    one_u = 1.0 - u
    pos = np.stack([one_u ** 3, 3 * u3 - 6 * u2 + 4, -3 * u3 + 3 * u2 + 3 * u + 1, u3], axis=-1) / 6.0
    vel = np.stack([one_u ** 2, -2 * u2 + 2 * u + 1, u2], axis=-1) / 2.0
    acc = np.stack([one_u, u], axis=-1)
    return pos, vel, acc


def _locate(traj: BSplineTrajectory, t):
    t = np.asarray(t, dtype=float)
    clamped = (t < 0.0) | (t > traj.duration)
    tc = np.clip(t, 0.0, traj.duration)
    s = tc / traj.dt
    seg = np.minimum(np.floor(s).astype(int), traj.num_points - 4)
    return seg, s - seg, clamped


def evaluate_many(traj: BSplineTrajectory, t):
    """Positions, velocities and accelerations at local times ``t`` (clamped to [0, duration])."""
    seg, u, clamped = _locate(traj, t)
    q = traj.control_points
    bp, bv, ba = _basis(u)
    idx = seg[..., None] + np.arange(4)
    pos = np.einsum("...k,...kd->...d", bp, q[idx])
    v_pts, a_pts = derivative_control_points(traj)
    vel = np.einsum("...k,...kd->...d", bv, v_pts[idx[..., :3]])
    acc = np.einsum("...k,...kd->...d", ba, a_pts[idx[..., :2]])
    return pos, vel, acc, clamped


def evaluate(traj: BSplineTrajectory, t: float) -> Evaluation:
    pos, vel, acc, clamped = evaluate_many(traj, np.array([t]))
    return Evaluation(pos[0], vel[0], acc[0], bool(clamped[0]))


def derivative_control_points(traj: BSplineTrajectory):
    """Velocity points (Q[i+1] - Q[i]) / dt and acceleration points (second differences / dt^2)."""
    return traj._derivative_points


def boundary_points(position, velocity, acceleration, dt):
    """First three control points reproducing the given state at t = 0."""
    p = np.asarray(position, dtype=float)
    v = np.asarray(velocity, dtype=float)
    a = np.asarray(acceleration, dtype=float)
    q1 = p - a * (dt * dt / 6.0)
    half_acc = a * (dt * dt / 2.0)
    return np.stack([q1 - v * dt + half_acc, q1, q1 + v * dt + half_acc])


def init_straight(start, start_accel, target, limits, dt: float, start_time: float = 0.0) -> BSplineTrajectory:
    """Straight-line spline from the live state to ``target``, ending at rest.

    ``start`` is a SimState; interior control points are evenly spaced so the
    nominal cruise speed is 0.6 * v_max.
    """
    if not dt > 0:
        raise InvalidInput("knot span must be > 0")
    target = np.asarray(target, dtype=float)
    if not np.all(np.isfinite(target)):
        raise InvalidInput("target must be finite")
    head = boundary_points(start.pose.position, start.velocity, start_accel, dt)
    spacing = NOMINAL_SPEED_FRACTION * limits.v_max * dt
    length = float(np.linalg.norm(target - head[2]))
    steps = max(1, math.ceil(length / spacing - 1e-9))
    frac = np.arange(1, steps + 1)[:, None] / steps
    interior = head[2] + frac * (target - head[2])
    interior[-1] = target
    points = np.vstack([head, interior, target, target])
    return BSplineTrajectory(points, dt, start_time)


def hover(position, dt: float = 0.2, start_time: float = 0.0) -> BSplineTrajectory:
    return BSplineTrajectory(np.repeat(np.asarray(position, dtype=float)[None], 6, axis=0), dt, start_time)


def reallocate_time(traj: BSplineTrajectory, v_max: float, a_max: float) -> BSplineTrajectory:
    """Uniformly stretch the knot span until velocity and acceleration hulls fit the limits."""
    if not (v_max > 0 and a_max > 0):
        raise InvalidInput("limits must be positive")
    v, a = derivative_control_points(traj)
    v_peak = float(np.max(np.linalg.norm(v, axis=1)))
    a_peak = float(np.max(np.linalg.norm(a, axis=1)))
    k = max(1.0, v_peak / v_max, math.sqrt(a_peak / a_max))
    if k <= 1.0 + 1e-12:
        return traj
    return replace(traj, dt=traj.dt * k)

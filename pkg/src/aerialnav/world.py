"""Deterministic simulator: analytic depth rendering, vehicle plant, ground-truth collisions."""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput
from .geometry import CameraModel, Pose4D, RigidTransform, signed_distance, wrap_yaw


@dataclass(frozen=True)
class DepthImage:
    width: int
    height: int
    values: np.ndarray  # (height, width) z-depth in meters, 0.0 = no return
    timestamp: float = 0.0

    def to_millimeters(self) -> np.ndarray:
        return np.rint(self.values * 1000.0).astype(np.uint16)

    @classmethod
    def from_millimeters(cls, mm: np.ndarray, timestamp: float = 0.0) -> "DepthImage":
        mm = np.asarray(mm)
        return cls(mm.shape[1], mm.shape[0], mm.astype(float) / 1000.0, timestamp)


@dataclass(frozen=True)
class SimState:
    pose: Pose4D
    velocity: np.ndarray
    time: float = 0.0

    @property
    def position(self) -> np.ndarray:
        return self.pose.position

    @classmethod
    def at_rest(cls, pose: Pose4D, time: float = 0.0) -> "SimState":
        return cls(pose, np.zeros(3), time)


@dataclass(frozen=True)
class Command:
    position: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray
    yaw: float
    timestamp: float = 0.0

    def __post_init__(self):
        if not (-math.pi <= self.yaw < math.pi):
            raise InvalidInput("command yaw must lie in [-pi, pi)")

    @classmethod
    def hold(cls, pose: Pose4D, timestamp: float = 0.0) -> "Command":
        return cls(pose.position, np.zeros(3), np.zeros(3), pose.yaw, timestamp)


@functools.lru_cache(maxsize=16)
def _camera_rays(camera: CameraModel, stride: int):
    rays = camera.ray_directions(stride)
    rays.setflags(write=False)
    return rays


def _visible(prim, origin, forward, reach):
    center, radius = prim.bounding_sphere()
    offset = center - origin
    dist = float(np.linalg.norm(offset))
    if dist - radius > reach:
        return False
    return float(offset @ forward) > -radius


def render_depth(world, camera: CameraModel, camera_pose: RigidTransform, t: float = 0.0,
                 stride: int = 1) -> DepthImage:
    """Z-depth image of the analytic world seen from ``camera_pose`` (optical frame in world)."""
    rays_cam = _camera_rays(camera, stride)
    h, w = rays_cam.shape[:2]
    origin = camera_pose.translation
    forward = camera_pose.rotation[:, 2]
    # a hit at z-depth max_range lies at most this far along the most oblique ray
    reach = camera.max_range / float(rays_cam[..., 2].min())
    visible = [p for p in world if _visible(p, origin, forward, reach)]
    values = np.zeros((h, w))
    if visible:
        rays_world = rays_cam.reshape(-1, 3) @ camera_pose.rotation.T
        best = np.full(h * w, np.inf)
        for prim in visible:
            best = np.minimum(best, prim.intersect(origin, rays_world))
        z = best.reshape(h, w) * rays_cam[..., 2]
        ok = np.isfinite(z) & (z >= camera.min_range) & (z <= camera.max_range)
        values[ok] = z[ok]
    return DepthImage(w, h, values, float(t))


def step_plant(state: SimState, command: Command, dt: float, yaw_rate_max: float,
               tau: float = 0.1, kp: float = 1.0, speed_cap: float | None = None) -> SimState:
    """Advance the first-order velocity-lag plant by ``dt``.

    The lag is integrated exactly under a zero-order hold on the effective
    velocity command, so a constant command decays as exp(-t / tau).
    """
    if not (0.0 < dt <= 0.1):
        raise InvalidInput(f"dt={dt} outside (0, 0.1]")
    pos = state.pose.position
    v_eff = command.velocity + kp * (command.position - pos)
    decay = math.exp(-dt / tau)
    dv = state.velocity - v_eff
    vel = v_eff + dv * decay
    new_pos = pos + v_eff * dt + dv * (tau * (1.0 - decay))
    if speed_cap is not None:
        speed = float(np.linalg.norm(vel))
        if speed > speed_cap:
            vel = vel * (speed_cap / speed)
    delta = wrap_yaw(command.yaw - state.pose.yaw)
    max_step = yaw_rate_max * dt
    delta = min(max(delta, -max_step), max_step)
    yaw = wrap_yaw(state.pose.yaw + delta)
    return SimState(Pose4D(float(new_pos[0]), float(new_pos[1]), float(new_pos[2]), yaw), vel,
                    state.time + dt)


@dataclass(frozen=True)
class CollisionResult:
    clearance: float
    collided: bool


def check_collision(world, pose: Pose4D, drone_radius: float) -> CollisionResult:
    if not drone_radius > 0:
        raise InvalidInput("drone_radius must be > 0")
    clearance = signed_distance(world, pose.position) - drone_radius
    return CollisionResult(clearance, clearance < 0.0)

"""Poses, yaw arithmetic, analytic obstacle primitives and pinhole camera math.

World frame is right-handed with z up; yaw is measured about +z from +x.
Camera frames follow the optical convention (x right, y down, z forward).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput

TWO_PI = 2.0 * math.pi


def wrap_yaw(angle: float) -> float:
    """Map an angle onto [-pi, pi)."""
    if not math.isfinite(angle):
        raise InvalidInput(f"non-finite angle {angle!r}")
    if -math.pi <= angle < math.pi:
        return float(angle)  # already wrapped; avoid fmod round-off
    wrapped = math.fmod(angle + math.pi, TWO_PI)
    if wrapped < 0.0:
        wrapped += TWO_PI
    wrapped -= math.pi
    # fmod round-off can land exactly on +pi
    if wrapped >= math.pi:
        wrapped -= TWO_PI
    return wrapped


@dataclass(frozen=True)
class Pose4D:
    x: float
    y: float
    z: float
    yaw: float

    def __post_init__(self):
        for name in ("x", "y", "z", "yaw"):
            if not math.isfinite(getattr(self, name)):
                raise InvalidInput(f"pose.{name} must be finite")
        if not (-math.pi <= self.yaw < math.pi):
            object.__setattr__(self, "yaw", wrap_yaw(self.yaw))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @classmethod
    def from_position(cls, position, yaw: float = 0.0) -> "Pose4D":
        return cls(float(position[0]), float(position[1]), float(position[2]), float(yaw))

    def as_list(self) -> list[float]:
        return [self.x, self.y, self.z, self.yaw]


def rot_z(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class RigidTransform:
    """Maps points from a child frame into a parent frame: p_parent = R p_child + t."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.translation

    def rotate(self, vectors: np.ndarray) -> np.ndarray:
        return np.asarray(vectors, dtype=float) @ self.rotation.T

    def compose(self, child: "RigidTransform") -> "RigidTransform":
        return RigidTransform(self.rotation @ child.rotation,
                              self.rotation @ child.translation + self.translation)

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    @classmethod
    def from_pose(cls, pose: Pose4D) -> "RigidTransform":
        return cls(rot_z(pose.yaw), pose.position)


# ---------------------------------------------------------------------------
# primitives

def _check_vec(name, value, n=3):
    arr = np.asarray(value, dtype=float).reshape(-1)
    if arr.shape != (n,) or not np.all(np.isfinite(arr)):
        raise InvalidInput(f"{name} must be {n} finite numbers")
    return arr


def _hit_from_interval(t_in, t_out):
    """Smallest positive parameter of the entry/exit interval, inf if none."""
    valid = t_in <= t_out
    hit = np.where(t_in > 0.0, t_in, np.where(t_out > 0.0, t_out, np.inf))
    return np.where(valid, hit, np.inf)


def _slab(o, d, lo, hi):
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (lo - o) * inv
        t2 = (hi - o) * inv
    t_lo = np.minimum(t1, t2)
    t_hi = np.maximum(t1, t2)
    parallel = d == 0.0
    inside = (o >= lo) & (o <= hi)
    t_lo = np.where(parallel, np.where(inside, -np.inf, np.inf), t_lo)
    t_hi = np.where(parallel, np.where(inside, np.inf, -np.inf), t_hi)
    return t_lo, t_hi


@dataclass(frozen=True)
class Sphere:
    center: np.ndarray
    radius: float

    kind = "sphere"

    def __post_init__(self):
        object.__setattr__(self, "center", _check_vec("sphere.center", self.center))
        if not (math.isfinite(self.radius) and self.radius > 0):
            raise InvalidInput("sphere.radius must be finite and > 0")

    def sdf(self, points):
        return np.linalg.norm(np.asarray(points, dtype=float) - self.center, axis=-1) - self.radius

    def intersect(self, origins, directions):
        oc = np.asarray(origins, dtype=float) - self.center
        b = np.sum(oc * directions, axis=-1)
        c = np.sum(oc * oc, axis=-1) - self.radius ** 2
        disc = b * b - c
        root = np.sqrt(np.maximum(disc, 0.0))
        t_in = np.where(disc >= 0.0, -b - root, np.inf)
        t_out = np.where(disc >= 0.0, -b + root, -np.inf)
        return _hit_from_interval(t_in, t_out)

    def bounding_sphere(self):
        return self.center, self.radius

    def to_dict(self):
        return {"type": "sphere", "center": self.center.tolist(), "radius": float(self.radius)}


@dataclass(frozen=True)
class AxisAlignedBox:
    min: np.ndarray
    max: np.ndarray

    kind = "box"

    def __post_init__(self):
        lo = _check_vec("box.min", self.min)
        hi = _check_vec("box.max", self.max)
        if not np.all(lo < hi):
            raise InvalidInput("box.min must be < box.max componentwise")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @property
    def center(self):
        return 0.5 * (self.min + self.max)

    @property
    def half_extent(self):
        return 0.5 * (self.max - self.min)

    def contains(self, points, margin=0.0):
        p = np.asarray(points, dtype=float)
        return np.all((p >= self.min + margin) & (p <= self.max - margin), axis=-1)

    def sdf(self, points):
        q = np.abs(np.asarray(points, dtype=float) - self.center) - self.half_extent
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(np.max(q, axis=-1), 0.0)
        return outside + inside

    def intersect(self, origins, directions):
        o = np.asarray(origins, dtype=float)
        d = np.asarray(directions, dtype=float)
        t_in = np.full(np.broadcast_shapes(o.shape, d.shape)[:-1], -np.inf)
        t_out = np.full_like(t_in, np.inf)
        for k in range(3):
            lo, hi = _slab(o[..., k], d[..., k], self.min[k], self.max[k])
            t_in = np.maximum(t_in, lo)
            t_out = np.minimum(t_out, hi)
        return _hit_from_interval(t_in, t_out)

    def bounding_sphere(self):
        return self.center, float(np.linalg.norm(self.half_extent))

    def to_dict(self):
        return {"type": "box", "min": self.min.tolist(), "max": self.max.tolist()}


@dataclass(frozen=True)
class VerticalCylinder:
    center_xy: np.ndarray
    radius: float
    z_min: float
    z_max: float

    kind = "cylinder"

    def __post_init__(self):
        object.__setattr__(self, "center_xy", _check_vec("cylinder.center_xy", self.center_xy, 2))
        if not (math.isfinite(self.radius) and self.radius > 0):
            raise InvalidInput("cylinder.radius must be finite and > 0")
        if not (math.isfinite(self.z_min) and math.isfinite(self.z_max) and self.z_min < self.z_max):
            raise InvalidInput("cylinder requires finite z_min < z_max")

    def sdf(self, points):
        p = np.asarray(points, dtype=float)
        radial = np.linalg.norm(p[..., :2] - self.center_xy, axis=-1) - self.radius
        zc = 0.5 * (self.z_min + self.z_max)
        axial = np.abs(p[..., 2] - zc) - 0.5 * (self.z_max - self.z_min)
        outside = np.hypot(np.maximum(radial, 0.0), np.maximum(axial, 0.0))
        inside = np.minimum(np.maximum(radial, axial), 0.0)
        return outside + inside

    def intersect(self, origins, directions):
        o = np.asarray(origins, dtype=float)
        d = np.asarray(directions, dtype=float)
        ox = o[..., 0] - self.center_xy[0]
        oy = o[..., 1] - self.center_xy[1]
        dx, dy = d[..., 0], d[..., 1]
        a = dx * dx + dy * dy
        b = ox * dx + oy * dy
        c = ox * ox + oy * oy - self.radius ** 2
        disc = b * b - a * c
        with np.errstate(divide="ignore", invalid="ignore"):
            root = np.sqrt(np.maximum(disc, 0.0))
            s_in = (-b - root) / a
            s_out = (-b + root) / a
        vertical = a < 1e-300
        s_in = np.where(vertical, np.where(c <= 0.0, -np.inf, np.inf), np.where(disc >= 0.0, s_in, np.inf))
        s_out = np.where(vertical, np.where(c <= 0.0, np.inf, -np.inf), np.where(disc >= 0.0, s_out, -np.inf))
        z_lo, z_hi = _slab(o[..., 2], d[..., 2], self.z_min, self.z_max)
        return _hit_from_interval(np.maximum(s_in, z_lo), np.minimum(s_out, z_hi))

    def bounding_sphere(self):
        zc = 0.5 * (self.z_min + self.z_max)
        center = np.array([self.center_xy[0], self.center_xy[1], zc])
        return center, math.hypot(self.radius, 0.5 * (self.z_max - self.z_min))

    def to_dict(self):
        return {"type": "cylinder", "center_xy": self.center_xy.tolist(), "radius": float(self.radius),
                "z_min": float(self.z_min), "z_max": float(self.z_max)}


Primitive = Sphere | AxisAlignedBox | VerticalCylinder


def primitive_from_dict(doc: dict) -> Primitive:
    kind = doc.get("type")
    if kind == "sphere":
        return Sphere(doc["center"], float(doc["radius"]))
    if kind == "box":
        return AxisAlignedBox(doc["min"], doc["max"])
    if kind == "cylinder":
        return VerticalCylinder(doc["center_xy"], float(doc["radius"]), float(doc["z_min"]), float(doc["z_max"]))
    raise InvalidInput(f"unknown primitive type {kind!r}")


def signed_distance_many(world, points) -> np.ndarray:
    """Vectorized union SDF; +inf for an empty world."""
    points = np.asarray(points, dtype=float)
    out = np.full(points.shape[:-1], np.inf)
    for prim in world:
        out = np.minimum(out, prim.sdf(points))
    return out


def signed_distance(world, point) -> float:
    return float(signed_distance_many(world, np.asarray(point, dtype=float)))


def ray_cast(world, origin, direction, max_range: float):
    """Distance to the first surface along a unit ray, or None."""
    direction = np.asarray(direction, dtype=float)
    if abs(np.linalg.norm(direction) - 1.0) > 1e-9:
        raise InvalidInput("ray direction must be unit length")
    origin = np.asarray(origin, dtype=float)
    best = np.inf
    for prim in world:
        best = min(best, float(prim.intersect(origin, direction)))
    if best <= max_range:
        return best
    return None


def ray_cast_many(world, origins, directions, max_range: float) -> np.ndarray:
    """Batched ray_cast; misses beyond max_range come back as inf."""
    origins = np.asarray(origins, dtype=float)
    directions = np.asarray(directions, dtype=float)
    shape = np.broadcast_shapes(origins.shape, directions.shape)[:-1]
    best = np.full(shape, np.inf)
    for prim in world:
        best = np.minimum(best, prim.intersect(origins, directions))
    best[best > max_range] = np.inf
    return best


# ---------------------------------------------------------------------------
# camera

# camera optical axes expressed in the body frame: z_c = x_b, x_c = -y_b, y_c = -z_b
OPTICAL_IN_BODY = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])


@dataclass(frozen=True)
class CameraModel:
    width: int = 160
    height: int = 120
    fx: float = 84.0
    fy: float = 84.0
    cx: float = 79.5
    cy: float = 59.5
    min_range: float = 0.3
    max_range: float = 5.0
    mount_offset: tuple = (0.05, 0.0, 0.0)

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise InvalidInput("camera width/height must be positive")
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidInput("camera fx, fy must be > 0")
        if not (0 < self.min_range < self.max_range):
            raise InvalidInput("camera requires 0 < min_range < max_range")

    @property
    def body_to_camera(self) -> RigidTransform:
        """Pose of the optical frame in the body frame."""
        return RigidTransform(OPTICAL_IN_BODY, np.asarray(self.mount_offset, dtype=float))

    def pose_in_world(self, pose: Pose4D) -> RigidTransform:
        return RigidTransform.from_pose(pose).compose(self.body_to_camera)

    def pixel_grid(self, stride: int = 1):
        v, u = np.mgrid[0:self.height:stride, 0:self.width:stride]
        return u.astype(float), v.astype(float)

    def ray_directions(self, stride: int = 1) -> np.ndarray:
        """Unit rays for every pixel on the stride grid, shape (H', W', 3)."""
        u, v = self.pixel_grid(stride)
        rays = np.stack([(u - self.cx) / self.fx, (v - self.cy) / self.fy, np.ones_like(u)], axis=-1)
        return rays / np.linalg.norm(rays, axis=-1, keepdims=True)

    def project(self, point_cam) -> tuple[float, float]:
        x, y, z = (float(c) for c in point_cam)
        return self.fx * x / z + self.cx, self.fy * y / z + self.cy

    def to_dict(self):
        return {"width": self.width, "height": self.height, "fx": self.fx, "fy": self.fy,
                "cx": self.cx, "cy": self.cy, "min_range": self.min_range, "max_range": self.max_range}


def pixel_to_camera_ray(camera: CameraModel, u: float, v: float) -> np.ndarray:
    if not (0 <= u < camera.width and 0 <= v < camera.height):
        raise InvalidInput(f"pixel ({u}, {v}) outside {camera.width}x{camera.height}")
    ray = np.array([(u - camera.cx) / camera.fx, (v - camera.cy) / camera.fy, 1.0])
    return ray / np.linalg.norm(ray)

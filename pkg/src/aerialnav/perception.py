"""Depth images to world-frame obstacle clouds, conflict detection and surface anchors."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraModel, RigidTransform
from .spatial import SpatialHashGrid, cell_keys

try:
    from . import _kernels
except ImportError:  # numba missing: numpy paths only
    _kernels = None

DEFAULT_STRIDE = 4
DEFAULT_VOXEL = 0.10
DEFAULT_HORIZON = 5.0


@dataclass(frozen=True, eq=False)
class LocalObstacleCloud:
    points: np.ndarray
    voxel_size: float = DEFAULT_VOXEL
    horizon: float = DEFAULT_HORIZON
    stamp: float = 0.0
    origin: np.ndarray | None = None
    _grids: dict = field(default_factory=dict, repr=False)

    def __len__(self):
        return len(self.points)

    def grid(self, cell_size: float) -> SpatialHashGrid:
        """Hash grid over the cloud, built once per cell size and then read-only."""
        key = float(cell_size)
        g = self._grids.get(key)
        if g is None:
            g = SpatialHashGrid(self.points, key)
            self._grids[key] = g
        return g

    @classmethod
    def empty(cls, stamp: float = 0.0) -> "LocalObstacleCloud":
        return cls(np.zeros((0, 3)), stamp=stamp)


def voxel_downsample(points, voxel_size: float, representative: str = "centroid", backend: str = "auto") -> np.ndarray:
    """One point per occupied voxel, ordered by voxel key.

    ``representative="centroid"`` averages the members; ``"medoid"`` keeps the
    member closest to that average (lowest input index on ties), so the
    output stays on sampled surfaces.
    """
    if not voxel_size > 0:
        raise ValueError("voxel_size must be > 0")
    if representative not in ("centroid", "medoid"):
        raise ValueError(f"unknown representative {representative!r}")
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        return pts.copy()
    if representative == "medoid" and _kernels is not None and backend != "numpy":
        return _kernels.voxel_medoid(np.ascontiguousarray(pts), float(voxel_size))
    keys = cell_keys(np.floor(pts / voxel_size).astype(np.int64))
    order = np.argsort(keys, kind="stable")
    sk = keys[order]
    change = np.r_[False, sk[1:] != sk[:-1]]
    head = np.flatnonzero(np.r_[True, change[1:]])
    group = np.cumsum(change)
    sp = pts[order]
    counts = np.diff(np.r_[head, len(sp)]).astype(float)
    # bincount sums sequentially in input order, like the compiled kernel
    centroid = np.stack([np.bincount(group, weights=sp[:, k]) for k in range(3)], axis=1) / counts[:, None]
    if representative == "centroid":
        return centroid
    d = np.linalg.norm(sp - centroid[group], axis=1)
    at_min = np.flatnonzero(d == np.minimum.reduceat(d, head)[group])
    # stable sort keeps input order inside a voxel, so the first minimum has the lowest index
    first = np.r_[True, group[at_min][1:] != group[at_min][:-1]]
    return sp[at_min[first]]


def enforce_spacing(points, voxel_size: float, backend: str = "auto") -> np.ndarray:
    """Drop points until no two are closer than voxel_size / 2.

    Expects at most one point per voxel, so close pairs always sit in
    adjacent voxels.  Voxels are visited in eight parity classes; voxels of
    one class are never adjacent, so a point is dropped exactly when it is
    close to a kept point of an earlier class.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) < 2:
        return pts
    if _kernels is not None and backend != "numpy":
        return pts[_kernels.spacing_keep(np.ascontiguousarray(pts), float(voxel_size))]
    parity = np.floor(pts / voxel_size).astype(np.int64) & 1
    rank = parity[:, 0] * 4 + parity[:, 1] * 2 + parity[:, 2]
    i, j = SpatialHashGrid(pts, 0.5 * voxel_size).pairs(0.5 * voxel_size)
    # orient each pair from the earlier class to the later one
    swap = rank[i] > rank[j]
    early = np.where(swap, j, i)
    late = np.where(swap, i, j)
    keep = np.ones(len(pts), dtype=bool)
    for cls in range(8):
        sel = rank[late] == cls
        keep[late[sel & keep[early]]] = False
    return pts[keep]


def backproject(depth, camera: CameraModel, camera_pose: RigidTransform, stride: int = DEFAULT_STRIDE,
                voxel_size: float = DEFAULT_VOXEL, horizon: float = DEFAULT_HORIZON) -> LocalObstacleCloud:
    """World-frame obstacle cloud from valid pixels on a ``stride`` grid."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    values = depth.values[::stride, ::stride]
    v, u = np.nonzero(values > 0.0)
    d = values[v, u]
    u = u * stride
    v = v * stride
    cam = np.stack([d * (u - camera.cx) / camera.fx, d * (v - camera.cy) / camera.fy, d], axis=1)
    world = camera_pose.apply(cam)
    origin = camera_pose.translation
    world = world[np.linalg.norm(world - origin, axis=1) <= horizon]
    if voxel_size > 0 and len(world):
        world = enforce_spacing(voxel_downsample(world, voxel_size, "medoid"), voxel_size)
    return LocalObstacleCloud(world, voxel_size, horizon, depth.timestamp, origin.copy())


def observed_free(points, depth, camera: CameraModel, camera_pose: RigidTransform) -> np.ndarray:
    """Mask of points the depth image shows as free space.

    A point counts when it projects inside the image, lies within the
    sensing range, and sits in front of the measured surface at its pixel.
    Pixels without a return are free out to ``max_range``.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    cam = camera_pose.inverse().apply(pts)
    z = cam[:, 2]
    ok = (z > 1e-9) & (z <= camera.max_range)
    zs = np.where(ok, z, 1.0)
    u = np.rint(camera.fx * cam[:, 0] / zs + camera.cx).astype(np.int64)
    v = np.rint(camera.fy * cam[:, 1] / zs + camera.cy).astype(np.int64)
    ok &= (u >= 0) & (u < camera.width) & (v >= 0) & (v < camera.height)
    out = np.zeros(len(pts), dtype=bool)
    d = depth.values[v[ok], u[ok]]
    out[ok] = (d == 0.0) | (d > z[ok])
    return out


def merge_clouds(clouds, voxel_size: float = DEFAULT_VOXEL) -> LocalObstacleCloud:
    clouds = list(clouds)
    pts = np.vstack([c.points for c in clouds]) if clouds else np.zeros((0, 3))
    if len(pts):
        pts = enforce_spacing(voxel_downsample(pts, voxel_size, "medoid"), voxel_size)
    stamp = max((c.stamp for c in clouds), default=0.0)
    horizon = max((c.horizon for c in clouds), default=DEFAULT_HORIZON)
    return LocalObstacleCloud(pts, voxel_size, horizon, stamp)


# ---------------------------------------------------------------------------
# conflicts and anchors

@dataclass(frozen=True)
class Conflict:
    control_index: int
    nearest_point: np.ndarray
    distance: float


@dataclass(frozen=True)
class AnchorPair:
    anchor: np.ndarray
    direction: np.ndarray
    owner_index: int


def free_indices(num_points: int) -> range:
    """Control points not pinned by the boundary conditions."""
    return range(3, num_points - 3)


def detect_conflicts(traj, cloud: LocalObstacleCloud, s_clear: float) -> list[Conflict]:
    if not s_clear > 0:
        raise ValueError("s_clear must be > 0")
    idx = free_indices(traj.num_points)
    if len(cloud) == 0 or len(idx) == 0:
        return []
    queries = traj.control_points[idx.start:idx.stop]
    dist, nearest = cloud.grid(s_clear).nearest(queries)
    out = []
    for j in np.nonzero(dist < s_clear)[0]:
        out.append(Conflict(idx.start + int(j), cloud.points[nearest[j]].copy(), float(dist[j])))
    return out


def _repulsive_direction(q, p, previous):
    offset = q - p
    norm = float(np.linalg.norm(offset))
    if norm > 1e-12:
        return offset / norm
    if previous is not None:
        offset = previous - p
        norm = float(np.linalg.norm(offset))
        if norm > 1e-12:
            return offset / norm
    return np.array([0.0, 0.0, 1.0])


def build_anchors(conflicts, control_points, voxel_size: float = DEFAULT_VOXEL,
                  existing=None) -> list[AnchorPair]:
    """Surface anchors with unit repulsive directions pointing at their control points.

    ``existing`` anchors are kept; a new anchor is dropped when one already
    constrains the same control point from the same voxel.
    """
    q = np.asarray(control_points, dtype=float)
    anchors = list(existing or [])
    seen = {(a.owner_index, _voxel_key(a.anchor, voxel_size)) for a in anchors}
    for c in conflicts:
        key = (c.control_index, _voxel_key(c.nearest_point, voxel_size))
        if key in seen:
            continue
        seen.add(key)
        i = c.control_index
        previous = q[i - 1] if i > 0 else None
        p = np.asarray(c.nearest_point, dtype=float)
        anchors.append(AnchorPair(p, _repulsive_direction(q[i], p, previous), i))
    return anchors


def _voxel_key(point, voxel_size):
    return int(cell_keys(np.floor(np.asarray(point) / voxel_size)))

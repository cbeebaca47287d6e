"""Uniform spatial hash grid for fixed-radius nearest-neighbour queries."""
from __future__ import annotations

import numpy as np

_BIAS = 1 << 20
_OFFSETS = np.array([(i, j, k) for i in (-1, 0, 1) for j in (-1, 0, 1) for k in (-1, 0, 1)], dtype=np.int64)


def cell_keys(cells: np.ndarray) -> np.ndarray:
    """Pack integer cell coordinates into one int64 key (21 bits per axis)."""
    c = cells.astype(np.int64) + _BIAS
    return (c[..., 0] << 42) | (c[..., 1] << 21) | c[..., 2]


class SpatialHashGrid:
    """Points bucketed by cell; ``nearest`` is exact whenever the true nearest
    neighbour lies within one cell size of the query."""

    def __init__(self, points, cell_size: float):
        if not cell_size > 0:
            raise ValueError("cell_size must be > 0")
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        self.cell_size = float(cell_size)
        keys = cell_keys(np.floor(pts / self.cell_size))
        order = np.argsort(keys, kind="stable")
        self.points = pts[order]
        self.original_index = order
        self._keys, self._start, self._count = np.unique(keys[order], return_index=True, return_counts=True)

    def __len__(self):
        return len(self.points)

    def _candidates(self, q):
        """(query index, sorted point index, distance) for every point in the 27 cells around each query.

        Rows come out grouped by query index in ascending order.
        """
        n = len(q)
        base = np.floor(q / self.cell_size).astype(np.int64)
        keys = cell_keys(base[:, None, :] + _OFFSETS[None]).reshape(-1)
        slot = np.searchsorted(self._keys, keys)
        slot = np.minimum(slot, len(self._keys) - 1)
        hit = self._keys[slot] == keys
        owner = np.repeat(np.arange(n), len(_OFFSETS))[hit]
        starts = self._start[slot[hit]]
        counts = self._count[slot[hit]]
        total = int(counts.sum())
        owners = np.repeat(owner, counts)
        first = np.repeat(np.cumsum(counts) - counts, counts)
        cand = np.arange(total) - first + np.repeat(starts, counts)
        d = np.linalg.norm(self.points[cand] - q[owners], axis=1)
        return owners, cand, d

    def nearest(self, queries):
        """Nearest point within ``cell_size`` of each query.

        Returns ``(distance, index)`` arrays; queries with nothing in range get
        ``inf`` and ``-1``.  Ties resolve to the smallest original index.
        """
        q = np.asarray(queries, dtype=float).reshape(-1, 3)
        n = len(q)
        dist = np.full(n, np.inf)
        index = np.full(n, -1, dtype=np.int64)
        if n == 0 or len(self.points) == 0:
            return dist, index
        owners, cand, d = self._candidates(q)
        if len(owners) == 0:
            return dist, index
        head = np.flatnonzero(np.r_[True, owners[1:] != owners[:-1]])
        group = np.cumsum(np.r_[False, owners[1:] != owners[:-1]])
        dmin = np.minimum.reduceat(d, head)
        orig = self.original_index[cand]
        big = np.iinfo(np.int64).max
        best = np.minimum.reduceat(np.where(d == dmin[group], orig, big), head)
        who = owners[head]
        in_range = dmin <= self.cell_size
        dist[who[in_range]] = dmin[in_range]
        index[who[in_range]] = best[in_range]
        return dist, index

    def pairs(self, radius: float):
        """Original-index pairs ``(i, j)``, ``i < j``, of points strictly closer than ``radius``."""
        if radius > self.cell_size:
            raise ValueError("radius exceeds cell size")
        if len(self.points) < 2:
            empty = np.zeros(0, dtype=np.int64)
            return empty, empty
        owners, cand, d = self._candidates(self.points)
        i = self.original_index[owners]
        j = self.original_index[cand]
        keep = (d < radius) & (i < j)
        return i[keep], j[keep]

    def within(self, queries, radius: float) -> np.ndarray:
        """Boolean per query: is any point strictly closer than ``radius`` (<= cell_size)."""
        if radius > self.cell_size:
            raise ValueError("radius exceeds cell size")
        dist, _ = self.nearest(queries)
        return dist < radius

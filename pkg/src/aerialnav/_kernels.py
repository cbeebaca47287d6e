"""Compiled inner loop for trajectory refinement.

Mirrors ``safety._Objective`` term by term; the numpy version stays the
reference and the tests check both agree.
"""
import numpy as np
from numba import njit


@njit(cache=True)
def _cost_grad(q, idx, anc_p, anc_v, s_clear, w_s, w_c, w_f, inv_dt, v2, a2, grad, need_grad):
    m = q.shape[0]
    inv_dt2 = inv_dt * inv_dt
    cost_s = 0.0
    cost_f = 0.0
    cost_c = 0.0
    if need_grad:
        for i in range(m):
            for k in range(3):
                grad[i, k] = 0.0
    for i in range(m - 2):
        d0 = q[i + 2, 0] - 2.0 * q[i + 1, 0] + q[i, 0]
        d1 = q[i + 2, 1] - 2.0 * q[i + 1, 1] + q[i, 1]
        d2 = q[i + 2, 2] - 2.0 * q[i + 1, 2] + q[i, 2]
        cost_s += d0 * d0 + d1 * d1 + d2 * d2
        h = (d0 * d0 + d1 * d1 + d2 * d2) * inv_dt2 * inv_dt2 - a2
        coef = 2.0 * w_s
        if h > 0.0:
            cost_f += h * h * h
            coef += 6.0 * w_f * h * h * inv_dt2 * inv_dt2
        if need_grad:
            grad[i, 0] += coef * d0
            grad[i, 1] += coef * d1
            grad[i, 2] += coef * d2
            grad[i + 1, 0] -= 2.0 * coef * d0
            grad[i + 1, 1] -= 2.0 * coef * d1
            grad[i + 1, 2] -= 2.0 * coef * d2
            grad[i + 2, 0] += coef * d0
            grad[i + 2, 1] += coef * d1
            grad[i + 2, 2] += coef * d2
    for i in range(m - 1):
        v0 = (q[i + 1, 0] - q[i, 0]) * inv_dt
        v1 = (q[i + 1, 1] - q[i, 1]) * inv_dt
        vz = (q[i + 1, 2] - q[i, 2]) * inv_dt
        h = v0 * v0 + v1 * v1 + vz * vz - v2
        if h > 0.0:
            cost_f += h * h * h
            if need_grad:
                coef = 6.0 * w_f * h * h * inv_dt
                grad[i + 1, 0] += coef * v0
                grad[i + 1, 1] += coef * v1
                grad[i + 1, 2] += coef * vz
                grad[i, 0] -= coef * v0
                grad[i, 1] -= coef * v1
                grad[i, 2] -= coef * vz
    for j in range(idx.shape[0]):
        i = idx[j]
        d = ((q[i, 0] - anc_p[j, 0]) * anc_v[j, 0] + (q[i, 1] - anc_p[j, 1]) * anc_v[j, 1]
             + (q[i, 2] - anc_p[j, 2]) * anc_v[j, 2])
        pen = s_clear - d
        if pen > 0.0:
            cost_c += pen * pen * pen
            if need_grad:
                coef = -3.0 * w_c * pen * pen
                grad[i, 0] += coef * anc_v[j, 0]
                grad[i, 1] += coef * anc_v[j, 1]
                grad[i, 2] += coef * anc_v[j, 2]
    return w_s * cost_s + w_c * cost_c + w_f * cost_f


@njit(cache=True)
def descend(q, idx, anc_p, anc_v, s_clear, w_s, w_c, w_f, inv_dt, v2, a2,
            max_iters, grad_tol, rel_tol, init_step, shrink, armijo_c, history):
    """Armijo gradient descent on rows 3..m-4 of ``q`` (in place).

    Writes accepted costs to ``history`` and returns how many were written.
    """
    m = q.shape[0]
    lo = 3
    hi = m - 3
    grad = np.zeros_like(q)
    scratch = np.zeros_like(q)
    trial = q.copy()
    f = _cost_grad(q, idx, anc_p, anc_v, s_clear, w_s, w_c, w_f, inv_dt, v2, a2, grad, True)
    history[0] = f
    n_hist = 1
    step = init_step
    for _ in range(max_iters):
        gmax = 0.0
        gg = 0.0
        for i in range(lo, hi):
            for k in range(3):
                g = grad[i, k]
                gg += g * g
                if abs(g) > gmax:
                    gmax = abs(g)
        if hi <= lo or gmax < grad_tol:
            break
        step = min(init_step, 2.0 * step)
        while True:
            for i in range(lo, hi):
                for k in range(3):
                    trial[i, k] = q[i, k] - step * grad[i, k]
            fn = _cost_grad(trial, idx, anc_p, anc_v, s_clear, w_s, w_c, w_f, inv_dt, v2, a2, scratch, False)
            if fn <= f - armijo_c * step * gg:
                break
            step *= shrink
            if step < 1e-14:
                return n_hist
        rel = (f - fn) / max(abs(f), 1e-300)
        for i in range(lo, hi):
            for k in range(3):
                q[i, k] = trial[i, k]
        f = _cost_grad(q, idx, anc_p, anc_v, s_clear, w_s, w_c, w_f, inv_dt, v2, a2, grad, True)
        history[n_hist] = f
        n_hist += 1
        if rel < rel_tol:
            break
    return n_hist


# ---------------------------------------------------------------------------
# point-cloud thinning; same results as the numpy code in ``perception``

_EMPTY = np.iinfo(np.int64).min


@njit(cache=True)
def _pack(cx, cy, cz):
    b = 1 << 20
    return ((cx + b) << 42) | ((cy + b) << 21) | (cz + b)


@njit(cache=True)
def _slot(table, key, mask, shift):
    # Fibonacci hashing: the product wraps mod 2**64 and its high bits pick the slot
    h = ((key * -7046029254386353131) >> shift) & mask
    while table[h] != _EMPTY and table[h] != key:
        h = (h + 1) & mask
    return h


@njit(cache=True)
def _cells(pts, voxel):
    n = pts.shape[0]
    cells = np.empty((n, 3), np.int64)
    for i in range(n):
        for k in range(3):
            cells[i, k] = np.int64(np.floor(pts[i, k] / voxel))
    return cells


@njit(cache=True)
def voxel_medoid(pts, voxel):
    """Per occupied voxel, the member nearest the voxel centroid (lowest index on ties), sorted by key."""
    n = pts.shape[0]
    bits = 1
    while (1 << bits) < 2 * n:
        bits += 1
    cap = 1 << bits
    mask = cap - 1
    shift = 64 - bits
    table = np.full(cap, _EMPTY, np.int64)
    group_of_slot = np.empty(cap, np.int64)
    group = np.empty(n, np.int64)
    keys = np.empty(n, np.int64)
    cells = _cells(pts, voxel)
    m = 0
    for i in range(n):
        key = _pack(cells[i, 0], cells[i, 1], cells[i, 2])
        h = _slot(table, key, mask, shift)
        if table[h] == _EMPTY:
            table[h] = key
            group_of_slot[h] = m
            keys[m] = key
            m += 1
        group[i] = group_of_slot[h]
    sums = np.zeros((m, 3))
    counts = np.zeros(m)
    for i in range(n):
        g = group[i]
        counts[g] += 1.0
        for k in range(3):
            sums[g, k] += pts[i, k]
    best = np.full(m, np.inf)
    best_i = np.full(m, -1, np.int64)
    for i in range(n):
        g = group[i]
        d = 0.0
        for k in range(3):
            e = pts[i, k] - sums[g, k] / counts[g]
            d += e * e
        d = np.sqrt(d)
        if d < best[g]:
            best[g] = d
            best_i[g] = i
    order = np.argsort(keys[:m])
    out = np.empty((m, 3))
    for j in range(m):
        out[j] = pts[best_i[order[j]]]
    return out


@njit(cache=True)
def spacing_keep(pts, voxel):
    """Keep mask for parity-class thinning to ``voxel / 2`` spacing."""
    n = pts.shape[0]
    bits = 1
    while (1 << bits) < 2 * n:
        bits += 1
    cap = 1 << bits
    mask = cap - 1
    shift = 64 - bits
    table = np.full(cap, _EMPTY, np.int64)
    head = np.full(cap, -1, np.int64)
    nxt = np.full(n, -1, np.int64)
    cells = _cells(pts, voxel)
    rank = np.empty(n, np.int64)
    for i in range(n):
        rank[i] = (cells[i, 0] & 1) * 4 + (cells[i, 1] & 1) * 2 + (cells[i, 2] & 1)
    for i in range(n - 1, -1, -1):
        key = _pack(cells[i, 0], cells[i, 1], cells[i, 2])
        h = _slot(table, key, mask, shift)
        table[h] = key
        nxt[i] = head[h]
        head[h] = i
    keep = np.ones(n, np.bool_)
    limit = 0.5 * voxel
    for cls in range(8):
        for i in range(n):
            if rank[i] != cls:
                continue
            for dx in range(-1, 2):
                for dy in range(-1, 2):
                    for dz in range(-1, 2):
                        key = _pack(cells[i, 0] + dx, cells[i, 1] + dy, cells[i, 2] + dz)
                        h = _slot(table, key, mask, shift)
                        j = head[h] if table[h] == key else -1
                        while j >= 0 and keep[i]:
                            if rank[j] < cls and keep[j]:
                                d = 0.0
                                for k in range(3):
                                    e = pts[i, k] - pts[j, k]
                                    d += e * e
                                if np.sqrt(d) < limit:
                                    keep[i] = False
                            j = nxt[j]
    return keep

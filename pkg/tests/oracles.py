"""Reference implementations the tests check the package against.

Written from first principles and sharing no code with ``aerialnav``.
"""
import math

import numpy as np

# uniform cubic B-spline blending matrix: p(u) = [1 u u^2 u^3] M [Q0 Q1 Q2 Q3]
BSPLINE_M = np.array([
    [1.0, 4.0, 1.0, 0.0],
    [-3.0, 0.0, 3.0, 0.0],
    [3.0, -6.0, 3.0, 0.0],
    [-1.0, 3.0, -3.0, 1.0],
]) / 6.0


def spline_eval(q, dt, t):
    """Position, velocity and acceleration of a uniform cubic B-spline at local time t."""
    q = np.asarray(q, dtype=float)
    n_seg = len(q) - 3
    s = min(max(t / dt, 0.0), n_seg)
    seg = min(int(math.floor(s)), n_seg - 1)
    u = s - seg
    block = BSPLINE_M @ q[seg:seg + 4]
    pos = np.array([1.0, u, u * u, u ** 3]) @ block
    vel = np.array([0.0, 1.0, 2 * u, 3 * u * u]) @ block / dt
    acc = np.array([0.0, 0.0, 2.0, 6 * u]) @ block / (dt * dt)
    return pos, vel, acc


def spline_dense(q, dt, spacing=0.01):
    """Samples along the spline at most ``spacing`` apart in arc length, knots included."""
    q = np.asarray(q, dtype=float)
    n_seg = len(q) - 3
    # chord of the control polygon bounds arc length per segment
    seg_len = max(np.linalg.norm(np.diff(q, axis=0), axis=1).max() * 3, 1e-12)
    per_seg = max(2, int(math.ceil(seg_len / spacing)) + 1)
    ts = np.unique(np.concatenate([np.linspace(k * dt, (k + 1) * dt, per_seg) for k in range(n_seg)]))
    out = [spline_eval(q, dt, t) for t in ts]
    return ts, np.array([o[0] for o in out]), np.array([o[1] for o in out]), np.array([o[2] for o in out])


def brute_min_distance(samples, cloud_points, chunk=512):
    """Exact minimum distance from any sample to any cloud point."""
    cloud = np.asarray(cloud_points, dtype=float)
    if len(cloud) == 0:
        return math.inf
    best = math.inf
    for i in range(0, len(samples), chunk):
        d = np.linalg.norm(samples[i:i + chunk, None, :] - cloud[None], axis=2)
        best = min(best, float(d.min()))
    return best


def sphere_sdf(p, c, r):
    return np.linalg.norm(np.asarray(p) - np.asarray(c), axis=-1) - r


def central_difference(f, x, h=1e-6):
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        fp = f(x)
        flat[i] = keep - h
        fm = f(x)
        flat[i] = keep
        gflat[i] = (fp - fm) / (2 * h)
    return g


# transition table written out from the executor contract
STATES = ("IDLE", "NAVIGATING", "REPLANNING", "TASK_COMPLETE")
EVENTS = ("DecisionReady", "Complete", "ReplanRequested", "TrajectoryExhausted", "RefineInfeasible", "Reset")


def expected_transition(state, event):
    if state == "TASK_COMPLETE":
        return "IDLE" if event == "Reset" else "TASK_COMPLETE"
    if event == "Reset":
        return "IDLE"
    table = {
        ("IDLE", "DecisionReady"): "NAVIGATING",
        ("NAVIGATING", "Complete"): "TASK_COMPLETE",
        ("NAVIGATING", "ReplanRequested"): "REPLANNING",
        ("NAVIGATING", "TrajectoryExhausted"): "REPLANNING",
        ("NAVIGATING", "RefineInfeasible"): "REPLANNING",
        ("REPLANNING", "DecisionReady"): "NAVIGATING",
        ("REPLANNING", "Complete"): "TASK_COMPLETE",
    }
    return table.get((state, event), state)

"""Top-down SVG of an episode: obstacles, replanned splines and the flown path."""
from __future__ import annotations

from xml.sax.saxutils import quoteattr

import numpy as np

from .episode import EpisodeLog
from .trajectory import BSplineTrajectory, evaluate_many

WIDTH = 800
MARGIN = 30


def replanned_trajectories(log: EpisodeLog) -> list:
    """The trajectory that took over after each entry into REPLANNING.

    One record per replan; the episode-final replan may have none if the
    episode ended before anything was swapped in.
    """
    out = []
    drawn = set()
    for event in log.transitions():
        if event["to"] != "REPLANNING" or event["from"] == "REPLANNING":
            continue
        for rec in log.trajectories:
            if rec.time >= event["time"] and rec.generation not in drawn:
                drawn.add(rec.generation)
                out.append(rec)
                break
    return out


def _spline_xy(rec, samples: int = 60) -> np.ndarray:
    traj = BSplineTrajectory(np.asarray(rec.control_points, dtype=float), rec.dt, rec.start_time)
    pos, _, _, _ = evaluate_many(traj, np.linspace(0.0, traj.duration, samples))
    return pos[:, :2]


def _extent(log: EpisodeLog, paths):
    pts = [p for p in paths if len(p)]
    for prim in log.world:
        if prim["type"] == "sphere":
            c, r = np.asarray(prim["center"][:2]), prim["radius"]
            pts.append(np.array([c - r, c + r]))
        elif prim["type"] == "cylinder":
            c, r = np.asarray(prim["center_xy"]), prim["radius"]
            pts.append(np.array([c - r, c + r]))
        elif prim["type"] == "box":
            pts.append(np.array([prim["min"][:2], prim["max"][:2]]))
    if log.goals:
        pts.append(np.asarray(log.goals)[:, :2])
    allp = np.vstack(pts) if pts else np.zeros((1, 2))
    lo, hi = allp.min(axis=0) - 0.5, allp.max(axis=0) + 0.5
    return lo, hi


def render_svg(log: EpisodeLog) -> str:
    flown = np.array([f.pose.position[:2] for f in log.frames]) if log.frames else np.zeros((0, 2))
    plans = [_spline_xy(r) for r in replanned_trajectories(log)]
    lo, hi = _extent(log, [flown, *plans])
    scale = (WIDTH - 2 * MARGIN) / max(hi[0] - lo[0], hi[1] - lo[1])
    height = int(round((hi[1] - lo[1]) * scale)) + 2 * MARGIN

    def xy(p):
        # y up in the world, down in SVG
        return MARGIN + (p[0] - lo[0]) * scale, height - MARGIN - (p[1] - lo[1]) * scale

    def points(arr):
        return " ".join("%.2f,%.2f" % xy(p) for p in arr)

    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" '
        f'viewBox="0 0 {WIDTH} {height}">',
        f"<title>{_text(log.scenario_name)} ({_text(log.outcome)})</title>",
        '<rect width="100%" height="100%" fill="white"/>',
    ]
    for prim in log.world:
        if prim["type"] in ("sphere", "cylinder"):
            c = prim["center"][:2] if prim["type"] == "sphere" else prim["center_xy"]
            cx, cy = xy(c)
            parts.append(f'<circle class="obstacle" cx="{cx:.2f}" cy="{cy:.2f}" r="{prim["radius"] * scale:.2f}" '
                         'fill="#bbbbbb" stroke="#555555"/>')
        elif prim["type"] == "box":
            x0, y1 = xy(prim["min"][:2])
            x1, y0 = xy(prim["max"][:2])
            parts.append(f'<rect class="obstacle" x="{x0:.2f}" y="{y0:.2f}" width="{x1 - x0:.2f}" '
                         f'height="{y1 - y0:.2f}" fill="#bbbbbb" stroke="#555555"/>')
    for g in log.goals:
        gx, gy = xy(g[:2])
        parts.append(f'<circle class="goal" cx="{gx:.2f}" cy="{gy:.2f}" r="6" fill="none" stroke="green"/>')
    for pts in plans:
        parts.append(f'<polyline class="plan" points="{points(pts)}" fill="none" stroke="#1f77b4" '
                     'stroke-dasharray="4 3"/>')
    if len(flown):
        parts.append(f'<polyline class="flown" points="{points(flown)}" fill="none" stroke="#d62728" '
                     'stroke-width="2"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _text(s: str) -> str:
    return quoteattr(str(s))[1:-1]


def plot_episode(log: EpisodeLog, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(render_svg(log))

"""Scenario randomization, dataset recording and episode metrics."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .episode import EpisodeLog
from .errors import GenerationInfeasible, WriteError
from .geometry import Pose4D, signed_distance, signed_distance_many, wrap_yaw
from .raster import decode_pgm16, encode_pgm16
from .scenario import Goal, ScenarioSpec, scenario_to_dict

MAX_ATTEMPTS = 10_000
MIN_SEPARATION = 2.0
DEFAULT_S_CLEAR = 0.4


def _bearing(a, b) -> float:
    d = np.asarray(b, dtype=float) - np.asarray(a, dtype=float)
    if math.hypot(d[0], d[1]) < 1e-9:
        return 0.0
    return wrap_yaw(math.atan2(d[1], d[0]))


def _sample_one(template: ScenarioSpec, rng: np.random.Generator, index: int, s_clear: float):
    lo, hi = template.bounds.min, template.bounds.max
    need = template.drone_radius + s_clear
    n_points = 1 + len(template.goals)
    points = []
    attempts = 0
    while len(points) < n_points:
        if attempts >= MAX_ATTEMPTS:
            raise GenerationInfeasible(index)
        attempts += 1
        p = rng.uniform(lo, hi)
        if template.world and signed_distance(template.world, p) < need:
            continue
        if points and np.linalg.norm(p - points[-1]) < MIN_SEPARATION:
            continue
        points.append(p)
    return points


def generate_scenarios(template: ScenarioSpec, n: int, master_seed: int,
                       s_clear: float = DEFAULT_S_CLEAR) -> list[ScenarioSpec]:
    """``n`` copies of ``template`` with start and goals resampled inside its bounds.

    Every endpoint keeps ``drone_radius + s_clear`` of clearance and
    consecutive endpoints are at least 2 m apart.  Scenario ``i`` draws from
    the i-th child of ``SeedSequence(master_seed)``, so lists are reproducible
    and a prefix of a longer list equals the shorter list.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    children = np.random.SeedSequence(master_seed).spawn(n)
    out = []
    for i, child in enumerate(children):
        rng = np.random.default_rng(child)
        points = _sample_one(template, rng, i, s_clear)
        goals = []
        for j, goal in enumerate(template.goals):
            goals.append(Goal(tuple(float(c) for c in points[j + 1]), _bearing(points[j], points[j + 1]),
                              goal.success_radius))
        start = Pose4D(*(float(c) for c in points[0]), _bearing(points[0], points[1]))
        seed = int(child.generate_state(1, dtype=np.uint64)[0])
        out.append(replace(template, start=start, goals=tuple(goals), seed=seed,
                           name=f"{template.name}-{i:04d}").validate())
    return out


# ---------------------------------------------------------------------------
# metrics

@dataclass(frozen=True)
class Metrics:
    success: bool
    collisions: int
    path_length: float
    min_clearance: float
    time_to_complete: float | None
    replan_count: int

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _frame_positions(log: EpisodeLog) -> np.ndarray:
    if not log.frames:
        return np.zeros((0, 3))
    return np.array([f.pose.position for f in log.frames])


def compute_metrics(log: EpisodeLog, scenario: ScenarioSpec) -> Metrics:
    """Episode metrics from the 10 Hz pose record and the ground-truth world."""
    pos = _frame_positions(log)
    path = float(np.linalg.norm(np.diff(pos, axis=0), axis=1).sum()) if len(pos) > 1 else 0.0
    if len(pos) and scenario.world:
        clearance = float(signed_distance_many(scenario.world, pos).min()) - scenario.drone_radius
    else:
        clearance = math.inf
    success = log.outcome == "Success"
    return Metrics(
        success=success,
        collisions=int(log.outcome == "Collision"),
        path_length=path,
        min_clearance=clearance,
        time_to_complete=log.duration if success else None,
        replan_count=log.replan_count(),
    )


# ---------------------------------------------------------------------------
# dataset files

POSE_COLUMNS = ("time", "x", "y", "z", "yaw", "vx", "vy", "vz")
COMMAND_COLUMNS = ("tick", "time", "x", "y", "z", "vx", "vy", "vz", "ax", "ay", "az", "yaw", "generation")


def _fmt(x) -> str:
    # repr round-trips floats exactly
    return repr(float(x))


def record_episode(log: EpisodeLog, output_dir, scenario: ScenarioSpec | None = None) -> dict:
    """Write manifest, pose and command tables and one depth image per 10 Hz frame.

    Returns the manifest.  Frames without a stored depth image are written
    as all-zero (no return) images so the frame count always matches.
    """
    root = Path(output_dir)
    expected = math.floor(log.duration * log.record_rate + 1e-9) + 1
    if len(log.frames) != expected:
        raise ValueError(f"log has {len(log.frames)} frames, expected {expected} for {log.duration} s")
    metrics = compute_metrics(log, scenario) if scenario is not None else None
    manifest = {
        "scenario": log.scenario_name,
        "seed": log.seed,
        "rates": {"control": log.control_rate, "policy": log.policy_rate, "record": log.record_rate},
        "outcome": log.outcome,
        "duration": log.duration,
        "frames": len(log.frames),
        "depth_dir": "depth",
        "depth_format": "pgm16-mm",
        "metrics": _json_safe(metrics.to_dict()) if metrics else None,
        "scenario_spec": scenario_to_dict(scenario) if scenario is not None else None,
    }
    path = root
    try:
        (root / "depth").mkdir(parents=True, exist_ok=True)
        shape = None
        for f in log.frames:
            if f.depth is not None:
                shape = f.depth.shape
                break
        blank = np.zeros(shape or (1, 1), dtype=np.uint16)
        for f in log.frames:
            path = root / "depth" / f"{f.index:06d}.pgm"
            path.write_bytes(encode_pgm16(f.depth if f.depth is not None else blank))
        path = root / "poses.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(POSE_COLUMNS)
            for f in log.frames:
                p = f.pose
                w.writerow([_fmt(f.time), _fmt(p.x), _fmt(p.y), _fmt(p.z), _fmt(p.yaw), *map(_fmt, f.velocity)])
        path = root / "commands.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(COMMAND_COLUMNS)
            for c in log.commands:
                w.writerow([c.tick, _fmt(c.time), *map(_fmt, c.position), *map(_fmt, c.velocity),
                            *map(_fmt, c.acceleration), _fmt(c.yaw), c.generation])
        path = root / "manifest.json"
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise WriteError(str(path)) from exc
    return manifest


def _json_safe(doc: dict) -> dict:
    return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in doc.items()}


@dataclass
class Dataset:
    manifest: dict
    poses: np.ndarray  # (N, 8) in POSE_COLUMNS order
    commands: np.ndarray  # (K, 13) in COMMAND_COLUMNS order
    depth_paths: list

    def depth(self, index: int) -> np.ndarray:
        return decode_pgm16(Path(self.depth_paths[index]).read_bytes())


def _read_table(path, columns) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != columns:
        raise ValueError(f"{path}: unexpected header")
    return np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(-1, len(columns))


def read_dataset(output_dir) -> Dataset:
    root = Path(output_dir)
    manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
    depth_dir = root / manifest.get("depth_dir", "depth")
    paths = sorted(str(p) for p in depth_dir.iterdir() if p.suffix == ".pgm")
    return Dataset(manifest, _read_table(root / "poses.csv", POSE_COLUMNS),
                   _read_table(root / "commands.csv", COMMAND_COLUMNS), paths)


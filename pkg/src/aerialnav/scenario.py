"""Scenario documents: schema, validation and serialization.

A scenario is a JSON object with keys ``name``, ``seed``, ``world``,
``start``, ``goals``, ``instruction``, ``limits``, ``camera`` and ``bounds``.
Optional keys ``drone_radius``, ``timeout_s`` and ``plant`` override the
vehicle defaults.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidInput, ParseError, ValidationError
from .geometry import (AxisAlignedBox, CameraModel, Pose4D, primitive_from_dict,
                       signed_distance)

DEFAULT_DRONE_RADIUS = 0.15
DEFAULT_TIMEOUT_S = 60.0
DEFAULT_TAU = 0.1
DEFAULT_KP = 1.0

_TOP_LEVEL = {"name", "seed", "world", "start", "goals", "instruction", "limits", "camera", "bounds",
              "drone_radius", "timeout_s", "plant"}
_REQUIRED = ("world", "start", "goals", "bounds")


@dataclass(frozen=True)
class Goal:
    position: tuple
    yaw: float = 0.0
    success_radius: float = 0.5

    @property
    def position_array(self):
        return np.asarray(self.position, dtype=float)


@dataclass(frozen=True)
class Limits:
    v_max: float = 1.0
    a_max: float = 2.0
    yaw_rate_max: float = 1.5


@dataclass(frozen=True)
class ScenarioSpec:
    world: tuple
    start: Pose4D
    goals: tuple
    bounds: AxisAlignedBox
    name: str = "unnamed"
    seed: int = 0
    instruction: str = ""
    limits: Limits = field(default_factory=Limits)
    camera: CameraModel = field(default_factory=CameraModel)
    drone_radius: float = DEFAULT_DRONE_RADIUS
    timeout_s: float = DEFAULT_TIMEOUT_S
    tau: float = DEFAULT_TAU
    kp: float = DEFAULT_KP

    def validate(self) -> "ScenarioSpec":
        if not (0 <= self.seed < 2 ** 64):
            raise ValidationError("seed", "must be a 64-bit unsigned integer")
        if not self.goals:
            raise ValidationError("goals", "at least one goal is required")
        lim = self.limits
        for key in ("v_max", "a_max", "yaw_rate_max"):
            val = getattr(lim, key)
            if not (math.isfinite(val) and val > 0):
                raise ValidationError(f"limits.{key}", "must be > 0")
        if not (self.drone_radius > 0):
            raise ValidationError("drone_radius", "must be > 0")
        if not (self.timeout_s > 0):
            raise ValidationError("timeout_s", "must be > 0")
        if not (self.tau > 0 and self.kp >= 0):
            raise ValidationError("plant", "tau must be > 0 and kp >= 0")
        self._check_point("start", self.start.position)
        for i, goal in enumerate(self.goals):
            if not (goal.success_radius > 0):
                raise ValidationError(f"goals[{i}].success_radius", "must be > 0")
            if not (-math.pi <= goal.yaw < math.pi):
                raise ValidationError(f"goals[{i}].yaw", "must lie in [-pi, pi)")
            self._check_point(f"goals[{i}]", goal.position_array)
        return self

    def _check_point(self, name, point):
        if not np.all(np.isfinite(point)):
            raise ValidationError(name, "non-finite position")
        if not self.bounds.contains(point):
            raise ValidationError(name, "outside flyable bounds")
        if self.world and signed_distance(self.world, point) < self.drone_radius:
            raise ValidationError(name, "clearance below drone radius")

    def with_seed(self, seed: int) -> "ScenarioSpec":
        return replace(self, seed=int(seed))


def _vec(doc, name, n):
    try:
        arr = [float(v) for v in doc]
    except (TypeError, ValueError):
        raise ValidationError(name, f"expected {n} numbers") from None
    if len(arr) != n or not all(math.isfinite(v) for v in arr):
        raise ValidationError(name, f"expected {n} finite numbers")
    return arr


def _object(doc, name, allowed):
    if not isinstance(doc, dict):
        raise ValidationError(name, "expected an object")
    unknown = set(doc) - set(allowed)
    if unknown:
        raise ValidationError(f"{name}.{sorted(unknown)[0]}", "unknown key")
    return doc


def scenario_from_dict(doc) -> ScenarioSpec:
    if not isinstance(doc, dict):
        raise ValidationError("<root>", "scenario must be an object")
    unknown = set(doc) - _TOP_LEVEL
    if unknown:
        raise ValidationError(sorted(unknown)[0], "unknown key")
    for key in _REQUIRED:
        if key not in doc:
            raise ValidationError(key, "required")

    world = []
    if not isinstance(doc["world"], list):
        raise ValidationError("world", "expected a list")
    for i, item in enumerate(doc["world"]):
        try:
            world.append(primitive_from_dict(item))
        except (InvalidInput, KeyError, TypeError, AttributeError) as exc:
            raise ValidationError(f"world[{i}]", str(exc)) from None

    start = _vec(doc["start"], "start", 4)
    if not isinstance(doc["goals"], list):
        raise ValidationError("goals", "expected a list")
    goals = []
    for i, g in enumerate(doc["goals"]):
        g = _object(g, f"goals[{i}]", ("position", "yaw", "success_radius"))
        if "position" not in g:
            raise ValidationError(f"goals[{i}].position", "required")
        goals.append(Goal(tuple(_vec(g["position"], f"goals[{i}].position", 3)),
                          float(g.get("yaw", 0.0)), float(g.get("success_radius", 0.5))))

    lim_doc = _object(doc.get("limits", {}), "limits", ("v_max", "a_max", "yaw_rate_max"))
    limits = Limits(**{k: float(v) for k, v in lim_doc.items()})

    cam_keys = ("width", "height", "fx", "fy", "cx", "cy", "min_range", "max_range")
    cam_doc = _object(doc.get("camera", {}), "camera", cam_keys)
    cam_args = {k: (int(v) if k in ("width", "height") else float(v)) for k, v in cam_doc.items()}
    if ("width" in cam_args or "height" in cam_args) and "cx" not in cam_args:
        cam_args["cx"] = (cam_args.get("width", CameraModel.width) - 1) / 2.0
    if ("width" in cam_args or "height" in cam_args) and "cy" not in cam_args:
        cam_args["cy"] = (cam_args.get("height", CameraModel.height) - 1) / 2.0
    try:
        camera = CameraModel(**cam_args)
    except InvalidInput as exc:
        raise ValidationError("camera", str(exc)) from None

    b_doc = _object(doc["bounds"], "bounds", ("min", "max"))
    try:
        bounds = AxisAlignedBox(_vec(b_doc.get("min"), "bounds.min", 3), _vec(b_doc.get("max"), "bounds.max", 3))
    except InvalidInput as exc:
        raise ValidationError("bounds", str(exc)) from None

    plant = _object(doc.get("plant", {}), "plant", ("tau", "kp"))
    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ValidationError("seed", "must be an integer")
    try:
        start_pose = Pose4D(*start)
    except InvalidInput as exc:
        raise ValidationError("start", str(exc)) from None
    spec = ScenarioSpec(
        world=tuple(world),
        start=start_pose,
        goals=tuple(goals),
        bounds=bounds,
        name=str(doc.get("name", "unnamed")),
        seed=seed,
        instruction=str(doc.get("instruction", "")),
        limits=limits,
        camera=camera,
        drone_radius=float(doc.get("drone_radius", DEFAULT_DRONE_RADIUS)),
        timeout_s=float(doc.get("timeout_s", DEFAULT_TIMEOUT_S)),
        tau=float(plant.get("tau", DEFAULT_TAU)),
        kp=float(plant.get("kp", DEFAULT_KP)),
    )
    return spec.validate()


def load_scenario(text: str) -> ScenarioSpec:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, (exc.lineno, exc.colno)) from None
    return scenario_from_dict(doc)


def load_scenario_file(path) -> ScenarioSpec:
    with open(path, encoding="utf-8") as fh:
        return load_scenario(fh.read())


def scenario_to_dict(spec: ScenarioSpec) -> dict:
    return {
        "name": spec.name,
        "seed": spec.seed,
        "world": [p.to_dict() for p in spec.world],
        "start": spec.start.as_list(),
        "goals": [{"position": list(map(float, g.position)), "yaw": g.yaw, "success_radius": g.success_radius}
                  for g in spec.goals],
        "instruction": spec.instruction,
        "limits": {"v_max": spec.limits.v_max, "a_max": spec.limits.a_max,
                   "yaw_rate_max": spec.limits.yaw_rate_max},
        "camera": spec.camera.to_dict(),
        "bounds": {"min": spec.bounds.min.tolist(), "max": spec.bounds.max.tolist()},
        "drone_radius": spec.drone_radius,
        "timeout_s": spec.timeout_s,
        "plant": {"tau": spec.tau, "kp": spec.kp},
    }


def dump_scenario(spec: ScenarioSpec) -> str:
    return json.dumps(scenario_to_dict(spec), indent=2)

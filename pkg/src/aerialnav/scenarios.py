"""Built-in scenario templates and random obstacle worlds.

Templates fix the world and flyable bounds; ``datagen.generate_scenarios``
resamples start and goals inside the bounds.
"""
from __future__ import annotations

import math

import numpy as np

from .geometry import AxisAlignedBox, Pose4D, Sphere, VerticalCylinder
from .scenario import Goal, ScenarioSpec


def empty_world() -> ScenarioSpec:
    return ScenarioSpec(
        world=(), start=Pose4D(0.0, 0.0, 1.0, 0.0), goals=(Goal((4.0, 0.0, 1.0)),),
        bounds=AxisAlignedBox((-1.0, -3.0, 0.8), (9.0, 3.0, 1.8)),
        name="empty", instruction="Fly forward to the marked spot.", timeout_s=40.0,
    ).validate()


def corridor() -> ScenarioSpec:
    # 2.4 m wide hallway with two pillars sticking out of alternating walls
    world = (
        AxisAlignedBox((-1.0, -1.5, 0.0), (11.0, -1.2, 3.0)),
        AxisAlignedBox((-1.0, 1.2, 0.0), (11.0, 1.5, 3.0)),
        AxisAlignedBox((3.0, -1.2, 0.0), (3.4, -0.5, 3.0)),
        AxisAlignedBox((6.5, 0.5, 0.0), (6.9, 1.2, 3.0)),
    )
    return ScenarioSpec(
        world=world, start=Pose4D(0.0, 0.0, 1.2, 0.0), goals=(Goal((9.5, 0.0, 1.2)),),
        bounds=AxisAlignedBox((0.0, -0.6, 0.8), (10.0, 0.6, 1.8)),
        name="corridor", instruction="Go down the hallway to the far end.", timeout_s=60.0,
    ).validate()


def slalom() -> ScenarioSpec:
    world = tuple(VerticalCylinder((x, 0.4 * (-1) ** i), 0.3, 0.0, 3.0)
                  for i, x in enumerate((2.0, 4.0, 6.0, 8.0)))
    return ScenarioSpec(
        world=world, start=Pose4D(0.0, 0.0, 1.2, 0.0), goals=(Goal((10.0, 0.0, 1.2)),),
        bounds=AxisAlignedBox((-0.5, -2.0, 0.8), (10.5, 2.0, 1.8)),
        name="slalom", instruction="Weave through the poles.", timeout_s=60.0,
    ).validate()


def sphere_field() -> ScenarioSpec:
    world = (
        Sphere((2.5, 0.3, 1.2), 0.5),
        Sphere((5.0, -0.8, 1.4), 0.6),
        Sphere((6.5, 1.2, 1.0), 0.5),
        Sphere((8.0, -0.2, 1.3), 0.4),
    )
    return ScenarioSpec(
        world=world, start=Pose4D(0.0, 0.0, 1.2, 0.0), goals=(Goal((10.0, 0.0, 1.2)),),
        bounds=AxisAlignedBox((-0.5, -2.5, 0.8), (10.5, 2.5, 1.8)),
        name="spheres", instruction="Reach the far side of the balloons.", timeout_s=60.0,
    ).validate()


def long_horizon() -> ScenarioSpec:
    world = (
        VerticalCylinder((3.0, 1.5), 0.35, 0.0, 3.0),
        Sphere((6.0, 4.0, 1.2), 0.5),
        AxisAlignedBox((1.0, 5.0, 0.0), (2.0, 6.0, 3.0)),
    )
    goals = (Goal((5.0, 1.0, 1.2), yaw=0.0), Goal((6.0, 6.0, 1.2), yaw=math.pi / 2),
             Goal((0.5, 3.0, 1.2), yaw=-math.pi + 0.4))
    return ScenarioSpec(
        world=world, start=Pose4D(0.0, 0.0, 1.2, 0.0), goals=goals,
        bounds=AxisAlignedBox((-0.5, -0.5, 0.8), (7.5, 7.5, 1.8)),
        name="long-horizon", timeout_s=120.0,
        instruction="Fly past the post, turn left toward the balloon, then come back to the wall.",
    ).validate()


def profile_scene() -> ScenarioSpec:
    """A sphere straight ahead in front of a back wall, so every stage has work to do."""
    world = (
        Sphere((3.0, 0.0, 1.2), 0.6),
        VerticalCylinder((2.5, 1.2), 0.25, 0.0, 3.0),
        AxisAlignedBox((6.0, -3.0, 0.0), (6.3, 3.0, 3.0)),
    )
    return ScenarioSpec(
        world=world, start=Pose4D(0.0, 0.0, 1.2, 0.0), goals=(Goal((5.0, 0.0, 1.2)),),
        bounds=AxisAlignedBox((-1.0, -3.0, 0.5), (5.8, 3.0, 2.5)),
        name="profile", instruction="Fly around the ball.", timeout_s=30.0,
    ).validate()


TEMPLATES = {
    "empty": empty_world,
    "corridor": corridor,
    "slalom": slalom,
    "spheres": sphere_field,
    "long-horizon": long_horizon,
}


def template(name: str) -> ScenarioSpec:
    try:
        return TEMPLATES[name]()
    except KeyError:
        raise KeyError(f"unknown template {name!r}; choose from {sorted(TEMPLATES)}") from None


# ---------------------------------------------------------------------------
# random worlds around a straight segment, for refinement benchmarks

def random_world(kind: str, rng: np.random.Generator, start, goal):
    """Obstacles scattered around the segment start -> goal.

    ``kind`` is one of "spheres", "corridor", "slalom" or "blocking" (a
    single sphere sitting on the segment).
    """
    start = np.asarray(start, dtype=float)
    goal = np.asarray(goal, dtype=float)
    axis = goal - start
    length = float(np.linalg.norm(axis))
    axis = axis / length
    side = np.array([-axis[1], axis[0], 0.0])
    if np.linalg.norm(side) < 1e-9:
        side = np.array([1.0, 0.0, 0.0])
    side /= np.linalg.norm(side)

    def along(frac, lateral, up=0.0):
        return start + frac * length * axis + lateral * side + np.array([0.0, 0.0, up])

    if kind == "blocking":
        r = rng.uniform(0.3, 0.6)
        c = along(rng.uniform(0.35, 0.65), rng.uniform(-0.15, 0.15), rng.uniform(-0.1, 0.1))
        return (Sphere(tuple(c), r),)
    if kind == "spheres":
        out = []
        for _ in range(rng.integers(3, 7)):
            c = along(rng.uniform(0.2, 0.8), rng.uniform(-1.5, 1.5), rng.uniform(-0.4, 0.4))
            out.append(Sphere(tuple(c), rng.uniform(0.2, 0.5)))
        return tuple(out)
    if kind == "slalom":
        out = []
        n = int(rng.integers(2, 5))
        for i, frac in enumerate(np.linspace(0.25, 0.75, n)):
            c = along(frac, (-1) ** i * rng.uniform(0.0, 0.5))
            out.append(VerticalCylinder((c[0], c[1]), rng.uniform(0.2, 0.35), 0.0, 3.0))
        return tuple(out)
    if kind == "corridor":
        half = rng.uniform(0.9, 1.4)
        out = []
        for sgn in (-1.0, 1.0):
            for frac in np.linspace(0.15, 0.85, 8):
                c = along(frac, sgn * (half + 0.2))
                out.append(VerticalCylinder((c[0], c[1]), 0.2, 0.0, 3.0))
        c = along(rng.uniform(0.4, 0.6), rng.uniform(-0.3, 0.3))
        out.append(VerticalCylinder((c[0], c[1]), rng.uniform(0.15, 0.3), 0.0, 3.0))
        return tuple(out)
    raise ValueError(f"unknown world kind {kind!r}")

"""Episode log records and their JSON form."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose4D

OUTCOMES = ("Success", "Collision", "Timeout", "PolicyLost")


@dataclass
class CommandRecord:
    tick: int
    time: float
    position: list
    velocity: list
    acceleration: list
    yaw: float
    generation: int


@dataclass
class Frame:
    index: int
    time: float
    pose: Pose4D
    velocity: list
    depth: np.ndarray | None = None  # uint16 millimeters
    command: CommandRecord | None = None


@dataclass
class TrajectoryRecord:
    generation: int
    time: float
    start_time: float
    dt: float
    control_points: list
    kind: str = "plan"  # "plan", "stop" or "hover"


@dataclass
class EpisodeLog:
    scenario_name: str
    seed: int
    control_rate: float
    policy_rate: float
    record_rate: float = 10.0
    frames: list = field(default_factory=list)
    commands: list = field(default_factory=list)
    events: list = field(default_factory=list)
    trajectories: list = field(default_factory=list)
    outcome: str = "Timeout"
    duration: float = 0.0
    final_pose: Pose4D | None = None
    min_clearance: float = float("inf")
    world: list = field(default_factory=list)  # primitive dicts, for plotting
    goals: list = field(default_factory=list)  # goal positions
    timings: dict = field(default_factory=dict)  # wall-clock, never serialized

    def transitions(self):
        return [e for e in self.events if e["type"] == "transition"]

    def replan_count(self) -> int:
        return sum(1 for e in self.transitions() if e["to"] == "REPLANNING" and e["from"] != "REPLANNING")

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario_name,
            "seed": self.seed,
            "control_rate": self.control_rate,
            "policy_rate": self.policy_rate,
            "record_rate": self.record_rate,
            "outcome": self.outcome,
            "duration": self.duration,
            "final_pose": self.final_pose.as_list() if self.final_pose else None,
            "min_clearance": self.min_clearance if np.isfinite(self.min_clearance) else None,
            "world": self.world,
            "goals": self.goals,
            "frames": [{"index": f.index, "time": f.time, "pose": f.pose.as_list(), "velocity": f.velocity,
                        "command_tick": f.command.tick if f.command else None} for f in self.frames],
            "commands": [c.__dict__ for c in self.commands],
            "events": self.events,
            "trajectories": [t.__dict__ for t in self.trajectories],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, doc: dict) -> "EpisodeLog":
        commands = [CommandRecord(**c) for c in doc["commands"]]
        by_tick = {c.tick: c for c in commands}
        frames = [Frame(f["index"], f["time"], Pose4D(*f["pose"]), f["velocity"], None,
                        by_tick.get(f["command_tick"])) for f in doc["frames"]]
        clearance = doc.get("min_clearance")
        return cls(
            scenario_name=doc["scenario"], seed=doc["seed"], control_rate=doc["control_rate"],
            policy_rate=doc["policy_rate"], record_rate=doc.get("record_rate", 10.0), frames=frames,
            commands=commands, events=doc["events"],
            trajectories=[TrajectoryRecord(**t) for t in doc["trajectories"]], outcome=doc["outcome"],
            duration=doc["duration"], final_pose=Pose4D(*doc["final_pose"]) if doc.get("final_pose") else None,
            min_clearance=float("inf") if clearance is None else clearance,
            world=doc.get("world", []), goals=doc.get("goals", []),
        )

    @classmethod
    def from_json(cls, text: str) -> "EpisodeLog":
        return cls.from_dict(json.loads(text))

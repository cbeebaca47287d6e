"""Policy boundary: observations in, semantic navigation decisions out."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .geometry import Pose4D, wrap_yaw
from .scenario import Goal, ScenarioSpec

YAW_TOLERANCE = 0.3
WAYPOINT_HORIZON = 5.0


@dataclass(frozen=True)
class Observation:
    pose: Pose4D
    depth: object = None  # DepthImage, may be elided
    instruction: str = ""
    episode_time: float = 0.0
    initial_frame_ref: object = None


@dataclass(frozen=True)
class NavDecision:
    waypoint: tuple
    yaw: float
    complete: bool = False
    replan: bool = False
    seq: int = 0

    def __post_init__(self):
        wp = tuple(float(c) for c in self.waypoint)
        if len(wp) != 3 or not all(math.isfinite(c) for c in wp):
            raise ValueError("waypoint must be 3 finite numbers")
        if not (math.isfinite(self.yaw) and -math.pi <= self.yaw < math.pi):
            raise ValueError("yaw must lie in [-pi, pi)")
        object.__setattr__(self, "waypoint", wp)


class _NoDecision:
    """Returned when the policy produced nothing in time; the executor keeps flying."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "NoDecision"

    def __bool__(self):
        return False


NoDecision = _NoDecision()


class Policy(Protocol):
    def decide(self, obs: Observation) -> NavDecision | _NoDecision: ...


def goal_reached(pose: Pose4D, goal: Goal) -> bool:
    dist = float(np.linalg.norm(pose.position - goal.position_array))
    return dist <= goal.success_radius and abs(wrap_yaw(pose.yaw - goal.yaw)) <= YAW_TOLERANCE


def decide_toward(pose: Pose4D, goal: Goal, seq: int = 0) -> NavDecision:
    """Ground-truth comparator for a single goal."""
    if goal_reached(pose, goal):
        return NavDecision(tuple(goal.position), goal.yaw, complete=True, seq=seq)
    here = pose.position
    delta = goal.position_array - here
    dist = float(np.linalg.norm(delta))
    if dist <= goal.success_radius:
        # in position; only the heading is left to fix
        return NavDecision(tuple(goal.position), goal.yaw, seq=seq)
    waypoint = goal.position_array if dist <= WAYPOINT_HORIZON else here + delta * (WAYPOINT_HORIZON / dist)
    if math.hypot(delta[0], delta[1]) > 1e-9:
        yaw = wrap_yaw(math.atan2(delta[1], delta[0]))
    else:
        yaw = pose.yaw
    return NavDecision(tuple(waypoint), yaw, seq=seq)


def oracle_decide(obs: Observation, scenario: ScenarioSpec, active_goal_index: int) -> NavDecision:
    if not 0 <= active_goal_index < len(scenario.goals):
        raise IndexError(f"goal index {active_goal_index} out of range")
    return decide_toward(obs.pose, scenario.goals[active_goal_index])


def scripted_decide(obs: Observation, subgoals, progress: int) -> tuple[NavDecision, int]:
    """Decision for the current subgoal plus the (possibly advanced) progress counter.

    ``complete`` is only raised once the final subgoal is satisfied.
    """
    if not subgoals:
        raise ValueError("subgoal list is empty")
    progress = min(progress, len(subgoals) - 1)
    decision = decide_toward(obs.pose, subgoals[progress])
    if decision.complete and progress < len(subgoals) - 1:
        progress += 1
        decision = decide_toward(obs.pose, subgoals[progress])
        if decision.complete and progress < len(subgoals) - 1:
            # at most one advance per call; the next call moves on
            decision = NavDecision(decision.waypoint, decision.yaw)
    return decision, progress


def simulate_policy_latency(output_tokens: int, seconds_per_token: float, prefill: float = 0.0) -> float:
    """Modeled decision latency: decode time per token times tokens, plus a fixed prefill."""
    if output_tokens < 0 or seconds_per_token < 0 or prefill < 0:
        raise ValueError("latency inputs must be >= 0")
    return output_tokens * seconds_per_token + prefill


# decode speeds of the quantized onboard models (seconds per generated token)
SECONDS_PER_TOKEN = {"3B-AWQ": 0.051, "7B-AWQ": 0.110}


@dataclass(frozen=True)
class LatencyModel:
    seconds_per_token: float = 0.02
    output_tokens: int = 20
    prefill: float = 0.0

    @property
    def latency(self) -> float:
        return simulate_policy_latency(self.output_tokens, self.seconds_per_token, self.prefill)


@dataclass
class _Counter:
    seq: int = 0

    def next(self) -> int:
        self.seq += 1
        return self.seq


@dataclass
class OraclePolicy:
    """Flies to each scenario goal in turn using ground-truth pose."""

    scenario: ScenarioSpec
    active_goal: int = 0
    _counter: _Counter = field(default_factory=_Counter)

    def decide(self, obs: Observation) -> NavDecision:
        decision = oracle_decide(obs, self.scenario, self.active_goal)
        while decision.complete and self.active_goal < len(self.scenario.goals) - 1:
            self.active_goal += 1
            decision = oracle_decide(obs, self.scenario, self.active_goal)
        return _with_seq(decision, self._counter.next())


@dataclass
class ScriptedPolicy:
    subgoals: tuple
    progress: int = 0
    _counter: _Counter = field(default_factory=_Counter)

    def decide(self, obs: Observation) -> NavDecision:
        decision, self.progress = scripted_decide(obs, self.subgoals, self.progress)
        return _with_seq(decision, self._counter.next())


def _with_seq(decision: NavDecision, seq: int) -> NavDecision:
    return NavDecision(decision.waypoint, decision.yaw, decision.complete, decision.replan, seq)

"""Deterministic aerial-navigation runtime: analytic simulator, depth-anchored
trajectory refinement, closed-loop executor and data generation."""

from .errors import (ConnectionLost, GenerationInfeasible, Infeasible, InvalidInput, NavError, ParseError,
                     ProtocolError, ValidationError, WriteError)
from .executor import ExecState, Event, ExecutorConfig, run_episode, step_state_machine
from .geometry import AxisAlignedBox, CameraModel, Pose4D, Sphere, VerticalCylinder
from .policy import NavDecision, NoDecision, Observation, OraclePolicy, ScriptedPolicy
from .scenario import Goal, Limits, ScenarioSpec, load_scenario, load_scenario_file

__version__ = "0.1.0"

__all__ = [
    "AxisAlignedBox", "CameraModel", "ConnectionLost", "ExecState", "Event", "ExecutorConfig",
    "GenerationInfeasible", "Goal", "Infeasible", "InvalidInput", "Limits", "NavDecision", "NavError",
    "NoDecision", "Observation", "OraclePolicy", "ParseError", "Pose4D", "ProtocolError", "ScenarioSpec",
    "ScriptedPolicy", "Sphere", "ValidationError", "VerticalCylinder", "WriteError", "load_scenario",
    "load_scenario_file", "run_episode", "step_state_machine",
]

"""Agent-based simulation of epidemic spread and travel controls on a campus road network."""

from .control import (
    BatchPolicy,
    ControlPolicy,
    IsolationPolicy,
    StaggerSchedule,
    congestion,
    optimize_stagger,
)
from .engine import ScenarioConfig, export_results, run_once, run_replicated
from .graph import MapError, RoadNetwork, build_path_tree, load_map, passage_window, shortest_path
from .infection import InfectionParams, InfectionState, distance_kernel, exposure_probability, viral_ramp
from .scenario import ScenarioError, load_scenario

__version__ = "0.1.0"

__all__ = [
    "BatchPolicy",
    "ControlPolicy",
    "InfectionParams",
    "InfectionState",
    "IsolationPolicy",
    "MapError",
    "RoadNetwork",
    "ScenarioConfig",
    "ScenarioError",
    "StaggerSchedule",
    "build_path_tree",
    "congestion",
    "distance_kernel",
    "exposure_probability",
    "export_results",
    "load_map",
    "load_scenario",
    "optimize_stagger",
    "passage_window",
    "run_once",
    "run_replicated",
    "shortest_path",
    "viral_ramp",
]

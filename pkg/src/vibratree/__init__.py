"""Vibration-based tree structure simulation and inference."""

__version__ = "0.1.0"

from .model import Branch, NodeGeometry, TreeModel, moment_of_inertia, static_positions, validate_tree
from .simulator import (
    ForcingSignal,
    LinearSystem,
    Mode,
    SimState,
    SimulationResult,
    Trajectory,
    assemble_step_system,
    linearize,
    modal_analysis,
    rescale_energy,
    simulate,
    step,
    total_energy,
)

__all__ = [
    "Branch",
    "ForcingSignal",
    "LinearSystem",
    "Mode",
    "NodeGeometry",
    "SimState",
    "SimulationResult",
    "Trajectory",
    "TreeModel",
    "assemble_step_system",
    "linearize",
    "modal_analysis",
    "moment_of_inertia",
    "rescale_energy",
    "simulate",
    "static_positions",
    "step",
    "total_energy",
    "validate_tree",
]

"""Simulation and diagnostics for the radius and angle of multidimensional SDEs."""
from __future__ import annotations

__version__ = "0.1.0"

from .core_model import (
    PolarCoefficients,
    RadialDecomposition,
    SdeSystem,
    decompose_matrix,
    decompose_vector,
    polar_coefficients,
)
from .integrator import (
    Ensemble,
    EnsembleSummary,
    SimulationError,
    StepSchedule,
    Trajectory,
    run_ensemble,
    simulate_cartesian,
    simulate_ode_skeleton,
    simulate_polar,
)
from .scenarios import Scenario, registry_list, registry_lookup

__all__ = [
    "__version__",
    "PolarCoefficients",
    "RadialDecomposition",
    "SdeSystem",
    "decompose_matrix",
    "decompose_vector",
    "polar_coefficients",
    "Ensemble",
    "EnsembleSummary",
    "SimulationError",
    "StepSchedule",
    "Trajectory",
    "run_ensemble",
    "simulate_cartesian",
    "simulate_ode_skeleton",
    "simulate_polar",
    "Scenario",
    "registry_list",
    "registry_lookup",
]

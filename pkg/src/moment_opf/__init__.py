"""Global solutions of small AC optimal power flow problems via moment relaxations."""

__version__ = "0.1.0"

from .lasserre import (
    MomentProblem,
    RelaxationError,
    RelaxationResult,
    add_reactive_penalty,
    build_relaxation,
    extract_voltages,
    pin_injection,
    solve_relaxation,
    true_cost,
)
from .netmodel import Network, NetworkError, build_admittance, case3, load_network, to_per_unit
from .sdpcore import ConicProblem, ConicSolution, LMIBlock, SolverSettings, certify_feasibility, solve
from .sweep import SweepCell, SweepSpec, feasible_region_inclusion, run_sweep

__all__ = [
    "ConicProblem",
    "ConicSolution",
    "LMIBlock",
    "MomentProblem",
    "Network",
    "NetworkError",
    "RelaxationError",
    "RelaxationResult",
    "SolverSettings",
    "SweepCell",
    "SweepSpec",
    "add_reactive_penalty",
    "build_admittance",
    "build_relaxation",
    "case3",
    "certify_feasibility",
    "extract_voltages",
    "feasible_region_inclusion",
    "load_network",
    "pin_injection",
    "run_sweep",
    "solve",
    "solve_relaxation",
    "to_per_unit",
    "true_cost",
]

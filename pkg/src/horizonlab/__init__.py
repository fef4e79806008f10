"""horizonlab: a numerical laboratory for infinite-horizon optimal control."""

from . import criteria, limits, pmp, problems, regularity, value
from ._kernels import backend_name
from .problems import (
    BlowUpError,
    ControlFamily,
    ControlProblem,
    ControlSignal,
    Trajectory,
    accumulate_cost,
    builtin_problem,
    concatenate,
    hamiltonian,
    integrate_trajectory,
    load_problem,
)
from .value import GridSpec, SolverError, ValueGrid, bolza_extend, dpp_residual, evaluate, solve_finite_horizon

__version__ = "0.1.0"

__all__ = [
    "BlowUpError",
    "ControlFamily",
    "ControlProblem",
    "ControlSignal",
    "GridSpec",
    "SolverError",
    "Trajectory",
    "ValueGrid",
    "accumulate_cost",
    "backend_name",
    "bolza_extend",
    "builtin_problem",
    "concatenate",
    "criteria",
    "dpp_residual",
    "evaluate",
    "hamiltonian",
    "integrate_trajectory",
    "limits",
    "load_problem",
    "pmp",
    "problems",
    "regularity",
    "solve_finite_horizon",
    "value",
]

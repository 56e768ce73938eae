"""DPG discretization of the Reissner-Mindlin plate with optimal test functions."""
from .benchmark import (
    BenchmarkError,
    ExactSolution,
    RateTable,
    StudyConfig,
    square_plate_load,
    convergence_study,
    l2_errors,
    residual_oracle,
)
from .forms import MaterialParams
from .mesh import Mesh, generate_mesh
from .system import SolverError, solve_problem

__all__ = [
    "BenchmarkError", "ExactSolution", "MaterialParams", "Mesh", "RateTable",
    "SolverError", "StudyConfig", "square_plate_load", "convergence_study",
    "generate_mesh", "l2_errors", "residual_oracle", "solve_problem",
]

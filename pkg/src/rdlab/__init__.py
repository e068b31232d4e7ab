"""Finite element laboratory for a posteriori error majorants of
reaction-diffusion problems on triangulations of the plane."""

from .femcore import (ExactSolution, FemField, ProblemSpec, SolverError, error_norms,
                      solve_reaction_diffusion)
from .fluxrec import FluxField, average_flux, l2_project_flux, numerical_flux
from .majorants import MajorantReport, SigmaRangeError
from .mesh import Mesh, MeshError, build_structured_unit_square, load_mesh, refine_uniform, save_mesh
from .studylab import StudyConfig, builtin_problem, run_calibration, run_inverse_check, run_sweep

__version__ = "0.1.0"

__all__ = [
    "ExactSolution", "FemField", "FluxField", "MajorantReport", "Mesh", "MeshError",
    "ProblemSpec", "SigmaRangeError", "SolverError", "StudyConfig", "average_flux",
    "build_structured_unit_square", "builtin_problem", "error_norms", "l2_project_flux",
    "load_mesh", "numerical_flux", "refine_uniform", "run_calibration", "run_inverse_check",
    "run_sweep", "save_mesh", "solve_reaction_diffusion",
]

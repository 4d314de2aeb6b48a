"""Sparsify-and-sweep preconditioning for the 2D Lippmann-Schwinger equation."""

from lssweep.problem import (
    ComplexField,
    GridSpec,
    IndexSet,
    PerturbationField,
    gaussian_velocity,
    make_grid,
    plane_wave,
    random_velocity,
)
from lssweep.kernel import DenseOperator, KernelTable, green2d
from lssweep.solver import SolverConfig, SolveReport, gmres, solve_scattering

__all__ = [
    "ComplexField",
    "DenseOperator",
    "GridSpec",
    "IndexSet",
    "KernelTable",
    "PerturbationField",
    "SolveReport",
    "SolverConfig",
    "gaussian_velocity",
    "gmres",
    "green2d",
    "make_grid",
    "plane_wave",
    "random_velocity",
    "solve_scattering",
]

__version__ = "0.1.0"

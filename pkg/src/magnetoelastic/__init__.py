"""Thermo-magneto-chemo-elastic continua: statics, dynamics and magnetostatics."""

from .constitutive import DefaultMaterial, MaterialModel, check_assumptions
from .discretization import Basis, DiscreteField, Mesh, evaluate
from .dynamics import DynamicLoads, DynamicProblem, SolverSettings, energy_audit, simulate, step
from .errors import MagnetoelasticError, SolverFailure, ValidationError
from .hyperstress import KernelSpec, determinant_bound, gagliardo_energy
from .loads import FieldLoad, SpatialProfile, TimeProfile
from .magnetostatics import SpatialGrid, solve_scalar_potential, uniform_disk_study
from .statics import OptimizerSettings, StaticLoads, StaticProblem, ground_state, minimize

__version__ = "0.1.0"

__all__ = [
    "Basis", "DefaultMaterial", "DiscreteField", "DynamicLoads", "DynamicProblem", "FieldLoad",
    "KernelSpec", "MagnetoelasticError", "MaterialModel", "Mesh", "OptimizerSettings", "SolverFailure",
    "SolverSettings", "SpatialGrid", "SpatialProfile", "StaticLoads", "StaticProblem", "TimeProfile",
    "ValidationError", "check_assumptions", "determinant_bound", "energy_audit", "evaluate",
    "gagliardo_energy", "ground_state", "minimize", "simulate", "solve_scalar_potential", "step",
    "uniform_disk_study",
]

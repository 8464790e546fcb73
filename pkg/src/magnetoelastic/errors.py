"""Exception hierarchy shared by all modules."""

from __future__ import annotations

__all__ = [
    "MagnetoelasticError",
    "ValidationError",
    "SolverFailure",
    "DegenerateDeformation",
    "OutOfRange",
    "QuadratureDivergence",
    "InvalidExponents",
    "UnsupportedOrder",
    "OutOfDomain",
    "UnknownTag",
    "NonInjective",
    "SolverDivergence",
    "LineSearchFailure",
    "StepFloorReached",
]


class MagnetoelasticError(Exception):
    """Base class for every error raised by the package."""


class ValidationError(MagnetoelasticError, ValueError):
    """Invalid input data or configuration (CLI exit code 2)."""


class SolverFailure(MagnetoelasticError, RuntimeError):
    """A numerical procedure could not deliver a result (CLI exit code 3)."""


class DegenerateDeformation(SolverFailure):
    """det F <= 0 somewhere a positive Jacobian is required."""


class OutOfRange(ValidationError):
    """Argument lies outside the range of an invertible constitutive map."""


class QuadratureDivergence(SolverFailure):
    """The singular pair quadrature cannot integrate the kernel."""


class InvalidExponents(ValidationError):
    """Exponent combination outside the admissible range."""


class UnsupportedOrder(ValidationError):
    """Requested derivative order exceeds the smoothness of the space."""


class OutOfDomain(UnsupportedOrder):
    """Evaluation point outside the closed box domain."""


class UnknownTag(ValidationError):
    """Facet tag not defined on the mesh."""


class NonInjective(SolverFailure):
    """Deformation overlaps itself beyond rasterization tolerance."""


class SolverDivergence(SolverFailure):
    """Iterative or Newton solver failed to reach its tolerance."""


class LineSearchFailure(SolverFailure):
    """No admissible descent step above machine step size."""


class StepFloorReached(SolverFailure):
    """Time step was halved below the configured floor."""

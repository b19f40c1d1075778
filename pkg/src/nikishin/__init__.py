"""High-precision Nikishin systems: multiple orthogonal polynomials,
second-type functions, and the Riemann-surface limit functions of their
relative asymptotics under rational perturbations of the generators."""

from .errors import (
    ConfigurationError,
    DegreeError,
    EvaluationError,
    IndexLadderError,
    NikishinError,
    NumericalError,
    PrecisionError,
    ProximityError,
    RootRefinementError,
    StructuralError,
    UnsupportedConfigurationError,
)
from .measures import Interval, MassPoint, Measure, QuadratureRule, build_quadrature, cauchy_transform, integrate, moments
from .polynomials import Polynomial
from .precision import DEFAULT_PRECISION_BITS, default_precision_bits

__all__ = [
    "ConfigurationError",
    "DegreeError",
    "EvaluationError",
    "IndexLadderError",
    "NikishinError",
    "NumericalError",
    "PrecisionError",
    "ProximityError",
    "RootRefinementError",
    "StructuralError",
    "UnsupportedConfigurationError",
    "Interval",
    "MassPoint",
    "Measure",
    "QuadratureRule",
    "build_quadrature",
    "cauchy_transform",
    "integrate",
    "moments",
    "Polynomial",
    "DEFAULT_PRECISION_BITS",
    "default_precision_bits",
]

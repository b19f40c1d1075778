"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: configuration problems exit with 2,
numerical failures with 3, and failed assertions/checks with 1.
"""

from __future__ import annotations


class NikishinError(Exception):
    """Base class for all package errors."""


class ConfigurationError(NikishinError):
    """Invalid construction data: bad weight descriptor, overlapping hulls,
    perturbation roots on a hull, malformed config files."""


class UnsupportedConfigurationError(ConfigurationError):
    """Requested a construct outside the supported regime (e.g. tilde
    induced polynomials for complex-coefficient perturbations)."""


class IndexLadderError(ConfigurationError):
    """A multi-index fell outside the admissible index class, or an
    auxiliary index acquired a negative component."""


class DegreeError(ConfigurationError):
    """Requested degree exceeds a rule's exactness bound."""


class NumericalError(NikishinError):
    """Base for runtime numerical failures (exit code 3)."""


class PrecisionError(NumericalError):
    """Computation cannot reach the requested accuracy at the working
    precision; escalate precision and retry."""


class ProximityError(NumericalError):
    """Evaluation point too close to a measure support or slit for the
    quadrature/branch inversion to be reliable."""


class EvaluationError(NumericalError):
    """An integrand or function value came out non-finite."""


class StructuralError(NumericalError):
    """A structural claim failed numerically (zero-count mismatch,
    decomposition residual above tolerance, identity violation)."""


class RootRefinementError(NumericalError):
    """Root polishing did not converge to the requested residual."""

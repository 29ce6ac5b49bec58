"""
Domain errors for the numerical kernel

Every error the CLI turns into an exit status derives from GammaPhaseError.
"""
from typing import Any, Optional


class GammaPhaseError(Exception):
    """Base class for all gammaphase errors"""


class DomainError(GammaPhaseError, ValueError):
    """Concentration outside [0, 1]"""


class ParameterError(GammaPhaseError, ValueError):
    """Physical parameters violate a positivity condition"""


class QuadratureError(GammaPhaseError, RuntimeError):
    """Adaptive refinement exceeded its depth limit"""


class IncompatibleMisfit(GammaPhaseError, ValueError):
    """Misfit admits no rank-one connection (det(e0) > 0)"""


class NonConvergence(GammaPhaseError, RuntimeError):
    """Iterative solve hit its iteration cap"""

    def __init__(self, message: str, residual: float = float("nan"), partial: Optional[Any] = None):
        super().__init__(message)
        self.residual = residual
        self.partial = partial


class StepFailure(GammaPhaseError, RuntimeError):
    """Backtracking found no energy decrease"""


class CheckFailed(GammaPhaseError, RuntimeError):
    """A campaign finished but its expected trend did not show"""

    def __init__(self, message: str, report: Optional[Any] = None):
        super().__init__(message)
        self.report = report


class GeometryError(GammaPhaseError, ValueError):
    """Transition layers overlap or a construction leaves the domain"""


class RangeError(GammaPhaseError, ValueError):
    """Target mass outside the achievable bracket"""


class ConfigError(GammaPhaseError, ValueError):
    """Run document is not well-formed JSON"""

    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None):
        super().__init__(message if line is None else f"line {line} column {column}: {message}")
        self.line = line
        self.column = column


__all__ = [
    'GammaPhaseError',
    'DomainError',
    'ParameterError',
    'QuadratureError',
    'IncompatibleMisfit',
    'NonConvergence',
    'StepFailure',
    'CheckFailed',
    'GeometryError',
    'RangeError',
    'ConfigError',
]

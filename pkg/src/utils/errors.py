"""
Exception categories shared across the toolkit.

The CLI maps each category onto its own exit status.
"""


class ChoptError(Exception):
    """Base class of every error raised deliberately by this package."""


class ConfigError(ChoptError, ValueError):
    pass


class MeshError(ChoptError):
    pass


class FieldMismatchError(ChoptError, ValueError):
    """A field, operator or velocity lives on a different mesh than expected."""


class SolverError(ChoptError, RuntimeError):
    pass


class NewtonConvergenceError(SolverError):
    def __init__(self, message: str, residuals=None):
        super().__init__(message)
        self.residuals = list(residuals or [])


class SingularSystemError(SolverError):
    pass


class CFLViolationError(SolverError):
    pass


class LineSearchError(ChoptError, RuntimeError):
    pass


class PODError(ChoptError):
    pass


class DEIMError(ChoptError):
    pass

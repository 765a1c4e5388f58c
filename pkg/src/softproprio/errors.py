"""Exception types raised across the toolkit."""


class SoftProprioError(Exception):
    """Base class; ``code`` is the machine-readable tag printed by the CLI."""

    code = "ERROR"


class ValidationError(SoftProprioError, ValueError):
    code = "VALIDATION"


class PointOutsideMesh(ValidationError):
    code = "POINT_OUTSIDE_MESH"


class ShapeMismatch(ValidationError):
    code = "SHAPE_MISMATCH"


class SolverError(SoftProprioError, RuntimeError):
    code = "SOLVER"


class DegenerateElement(SolverError):
    code = "DEGENERATE_ELEMENT"


class DegenerateSegment(SolverError):
    code = "DEGENERATE_SEGMENT"


class NonConvergence(SolverError):
    code = "NON_CONVERGENCE"


class SingularSystem(SolverError):
    code = "SINGULAR_SYSTEM"


class Diverged(SolverError):
    code = "DIVERGED"


class NoMinimumInInterval(SolverError):
    code = "NO_MINIMUM_IN_INTERVAL"

    def __init__(self, message, endpoint=None):
        super().__init__(message)
        self.endpoint = endpoint


class IllConditioned(UserWarning):
    """Warning: reduced normal matrix is badly conditioned; ridge keeps the solve well posed."""

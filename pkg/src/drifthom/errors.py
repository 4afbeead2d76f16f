"""Exception hierarchy.

Everything derives from :class:`DriftHomError` so callers can catch the whole
family; the leaf names match the failure modes documented for each solver.
"""


class DriftHomError(Exception):
    pass


# geometry
class ObstacleTouchesOuterBoundary(DriftHomError, ValueError):
    pass


class EmptyGammaN(DriftHomError, ValueError):
    pass


class NonGridAlignedObstacle(DriftHomError, ValueError):
    pass


class InvalidResolution(DriftHomError, ValueError):
    pass


# linear algebra
class IndexOutOfRange(DriftHomError, IndexError):
    pass


class NotConverged(DriftHomError, RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class IncompatibleRightHandSide(DriftHomError, ValueError):
    pass


# cell problems / tensors
class CutoffOverlapsOuterBoundary(DriftHomError, ValueError):
    pass


class GeometryMismatch(DriftHomError, ValueError):
    pass


class CoercivityViolated(DriftHomError, ArithmeticError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


# macroscopic problem
class SignConditionViolated(DriftHomError, ValueError):
    pass


class EmptyHistory(DriftHomError, ValueError):
    pass


class PicardNotConverged(DriftHomError, RuntimeError):
    pass


class LinearSolveFailed(DriftHomError, RuntimeError):
    pass


class OuterIterationNotConverged(DriftHomError, RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class PositivityViolated(DriftHomError, ArithmeticError):
    pass


class ComparisonViolated(DriftHomError, ArithmeticError):
    pass


class OrderingPreconditionFailed(DriftHomError, ValueError):
    """Initial data handed to the comparison check are not ordered."""


class NotIsotropic(DriftHomError, ValueError):
    pass


class InversionFailed(DriftHomError, ArithmeticError):
    pass


class MonotonicityViolated(DriftHomError, ArithmeticError):
    pass


# microscopic problem
class CFLViolation(DriftHomError, ValueError):
    pass


class FrameOutOfRange(DriftHomError, ValueError):
    pass


class NonMonotoneConvergence(DriftHomError, ArithmeticError):
    def __init__(self, message, table=None):
        super().__init__(message)
        self.table = table


# configuration
class AssumptionViolated(DriftHomError, ValueError):
    def __init__(self, name, evidence):
        super().__init__(f"assumption {name} violated: {evidence}")
        self.name = name
        self.evidence = evidence


# pipeline


class StageError(DriftHomError):
    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause

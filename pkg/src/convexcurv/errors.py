"""Exception hierarchy shared by all modules."""


class ConvexCurvError(Exception):
    """Base class for every error raised by the package."""


class DomainError(ConvexCurvError, ValueError):
    """A point, parameter or dimension lies outside the admissible domain."""


class EvaluationError(ConvexCurvError, RuntimeError):
    """A function could not be evaluated (e.g. a failed line search)."""


class UnsupportedOperationError(ConvexCurvError, TypeError):
    """The operation is not defined for this function family."""


class DegenerateSpanError(ConvexCurvError, ValueError):
    """The requested span has dimension zero."""


class PreconditionError(ConvexCurvError, ValueError):
    """An input violates a documented precondition."""


class ChartRadiusError(PreconditionError):
    """A chart line misses the body inside the search bounds."""


class TriangleInequalityError(ConvexCurvError, ValueError):
    """Three distances are too far from satisfying the triangle inequality."""


class UnreliableEvaluationError(EvaluationError):
    """A nested optimum was attained on the boundary of its search set."""


class ConfigValidationError(ConvexCurvError, ValueError):
    """A scenario config does not validate; ``path`` names the bad field."""

    def __init__(self, message: str, path: str = "") -> None:
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)

"""Exception types shared across the package."""


class SemElError(Exception):
    """Base class. ``kind`` is the short machine-readable error tag."""

    kind = "error"


class SingularMatrixError(SemElError, ArithmeticError):
    """``A(rho) = I - rho W`` is (numerically) singular."""

    kind = "singular"

    def __init__(self, pivot, message=None):
        self.pivot = pivot
        super().__init__(message or f"A(rho) is singular: pivot magnitude {abs(pivot):.3e}")


class NonPositiveDeterminantError(SemElError, ArithmeticError):
    kind = "nonpositive-determinant"


class InconsistentFitError(SemElError, ArithmeticError):
    """The MLE is beaten by the hypothesised point by more than noise."""

    kind = "inconsistent-fit"


class WeightsFormatError(SemElError, ValueError):
    """A weights file could not be parsed. ``line`` is 1-based when known."""

    kind = "format"

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NonConvergenceError(SemElError, ArithmeticError):
    kind = "non-convergence"

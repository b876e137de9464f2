"""Exception hierarchy shared by all modules."""


class DCAPEPError(Exception):
    """Base class for every error raised by this package."""


class ParameterError(DCAPEPError, ValueError):
    pass


class DimensionMismatch(DCAPEPError, ValueError):
    pass


class InternalError(DCAPEPError, RuntimeError):
    pass


class FactorizationError(DCAPEPError, ArithmeticError):
    pass


class DegenerateError(DCAPEPError, ArithmeticError):
    pass


class SolverFailure(DCAPEPError, RuntimeError):
    """Raised when the conic backend cannot produce a trustworthy answer.

    ``diagnostics`` carries whatever the backend reported (status string,
    residuals, iteration counts) so callers can log it.
    """

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class SubproblemFailure(DCAPEPError, RuntimeError):
    pass


class ClassMismatch(DCAPEPError, ValueError):
    pass


class BoundViolation(DCAPEPError, AssertionError):
    """A run did worse than a bound that should hold for it."""

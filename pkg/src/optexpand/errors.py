"""Exception hierarchy shared by all modules."""


class ExpansionError(Exception):
    """Base class for every error raised by this package."""


class DomainError(ExpansionError, ValueError):
    """A parameter or argument lies outside its admissible domain."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class DegenerateError(ExpansionError, ArithmeticError):
    """A closed-form quantity is undefined at the requested point."""


class ConvergenceError(ExpansionError, RuntimeError):
    pass


class StabilityError(ExpansionError, RuntimeError):
    pass


class BoundaryAmbiguityError(ExpansionError, RuntimeError):
    """The numerical exercise region is not a single contiguous time band."""


class BudgetError(ExpansionError, ValueError):
    pass


class NonFiniteError(ExpansionError, FloatingPointError):
    def __init__(self, message: str, step: int | None = None):
        self.step = step
        super().__init__(message if step is None else f"{message} (step {step})")


class DistributionError(ExpansionError, ValueError):
    """A claim-size sampler does not reproduce its declared moments."""

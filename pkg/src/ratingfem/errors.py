"""Exception types raised across the package."""


class RatingFEMError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(RatingFEMError, ValueError):
    pass


class DomainError(RatingFEMError, ValueError):
    pass


class ConfigurationError(RatingFEMError, ValueError):
    """Bad configuration; ``key`` holds the dotted path when known."""

    def __init__(self, message, key=None):
        self.key = key
        super().__init__(f"{key}: {message}" if key else message)


class InconsistentInputError(RatingFEMError, ValueError):
    pass


class SingularSystemError(RatingFEMError, ArithmeticError):
    pass


class SolverError(RatingFEMError):
    """A failure inside the time loop, tagged with the failing step index."""

    def __init__(self, message, step=None):
        self.step = step
        super().__init__(f"step {step}: {message}" if step is not None else message)


class RootFailureError(RatingFEMError, ArithmeticError):
    """Newton iteration did not converge. Carries the last iterate and residual."""

    def __init__(self, message, x=None, residual=None):
        self.x = x
        self.residual = residual
        super().__init__(message)

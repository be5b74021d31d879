"""Exception types shared across the package."""


class ContractError(RuntimeError):
    """A precondition of an operation was violated by the caller."""


class DimensionError(ValueError):
    """Array shapes do not line up."""


class NonFiniteError(FloatingPointError):
    """A NaN or infinity showed up where only finite values are allowed."""


class ConvergenceError(RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ParseError(ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class TriplesRequiredError(ValueError):
    """Raised when a triple-consuming method is handed (state, action) pairs only."""


class ScalingError(ValueError):
    pass

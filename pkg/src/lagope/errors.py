"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Raised when data, dimensions, or arguments violate an operation's contract."""


class InvalidConfigError(ValueError):
    """Raised when a configuration value is out of its documented range."""


class ParseError(ValueError):
    """Raised on malformed CSV/JSON inputs; carries the offending location."""

    def __init__(self, message: str, row: int | None = None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class UnsupportedPolicyError(TypeError):
    """Raised when an operation requires a policy variant it does not support."""


class InvalidPropensityError(ValueError):
    """Raised when a logged/fitted propensity is zero or negative."""

    def __init__(self, message: str, sample_index: int | None = None):
        if sample_index is not None:
            message = f"sample {sample_index}: {message}"
        super().__init__(message)
        self.sample_index = sample_index


class ConvergenceError(RuntimeError):
    """Raised when an iterative fit fails to converge; carries the final gradient norm."""

    def __init__(self, message: str, gradient_norm: float):
        super().__init__(f"{message} (final gradient norm {gradient_norm:.3e})")
        self.gradient_norm = gradient_norm


class NumericError(RuntimeError):
    """Raised when a linear system cannot be solved despite regularization."""

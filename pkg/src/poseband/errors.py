"""Exception types shared across the package."""


class PosebandError(Exception):
    """Base class for all package errors."""


class InvalidInput(PosebandError, ValueError):
    """Raised when an operation is handed malformed values."""


class ValidationError(PosebandError, ValueError):
    """Raised when configuration or data fails validation."""


class ParseError(ValidationError):
    """Raised on malformed file content; carries the offending line number."""

    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class StateError(PosebandError, RuntimeError):
    """Raised when operations run out of order (e.g. backward before forward)."""


class ContractViolation(PosebandError, ValueError):
    """Raised when a numeric contract is broken (e.g. crossing quantile bounds)."""


class TrainingDiverged(PosebandError, RuntimeError):
    """Raised when training produces non-finite losses or gradients."""

"""Custom exception classes for the latent guidance engine."""

from typing import Optional
from typing import Sequence

EXIT_USAGE = 1
EXIT_NUMERIC = 2


class LcgError(Exception):
    """Base exception for engine operations."""

    def __init__(self, message: str, exit_code: int = EXIT_USAGE) -> None:
        """Initialize engine exception.

        Args:
            message: Error message
            exit_code: Process exit code the CLI reports for this error
        """
        super().__init__(message)
        self.exit_code = exit_code


class DimensionMismatchError(LcgError):
    """Exception for vectors or matrices whose shapes do not chain."""

    def __init__(self, what: str, expected: int, actual: int) -> None:
        """Initialize dimension mismatch exception.

        Args:
            what: Name of the offending operand
            expected: Expected dimension
            actual: Received dimension
        """
        super().__init__(f"Dimension mismatch for {what}: expected {expected}, got {actual}")
        self.what = what
        self.expected = expected
        self.actual = actual


class ScheduleError(LcgError):
    """Exception for invalid noise schedule parameters or timesteps."""


class NumericError(LcgError):
    """Exception for non-finite values or divergence."""

    def __init__(self, stage: str, detail: str) -> None:
        """Initialize numeric failure exception.

        Args:
            stage: Computation stage that failed
            detail: What went wrong
        """
        super().__init__(f"Numeric failure in {stage}: {detail}", exit_code=EXIT_NUMERIC)
        self.stage = stage


class DataError(LcgError):
    """Exception for unusable datasets or missing data files."""


class ClassifierNotFoundError(LcgError):
    """Exception for a guidance term that names no trained classifier."""

    def __init__(self, attribute: str, available: Optional[Sequence[str]] = None) -> None:
        """Initialize classifier not found exception.

        Args:
            attribute: Attribute name
            available: Attributes that do have classifiers
        """
        known = ", ".join(available) if available else "none"
        super().__init__(f"No classifier for attribute '{attribute}' (available: {known})")
        self.attribute = attribute


class ClassifierKindError(LcgError):
    """Exception for an operation that needs a linear classifier."""

    def __init__(self, attribute: str, operation: str) -> None:
        """Initialize classifier kind exception.

        Args:
            attribute: Attribute name of the classifier
            operation: Operation that requires the linear kind
        """
        super().__init__(f"{operation} requires a linear classifier, '{attribute}' is not linear")
        self.attribute = attribute
        self.operation = operation


class GuidanceSpecError(LcgError):
    """Exception for malformed guidance requests."""


class ConditionError(LcgError):
    """Exception for unsatisfiable or unsupported attribute conditions."""


class EvaluationError(LcgError):
    """Exception for metrics that cannot be computed from their inputs."""


class ConfigurationError(LcgError):
    """Exception for experiment configuration error."""

    def __init__(self, message: str, missing_keys: Optional[list] = None) -> None:
        """Initialize configuration error exception.

        Args:
            message: Error message
            missing_keys: Required configuration keys that were absent
        """
        super().__init__(f"Configuration error: {message}")
        self.missing_keys = missing_keys or []

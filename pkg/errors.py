"""
Exception hierarchy shared by every levigrav module.

Validation problems (bad inputs, configs, files) exit with code 1, numerical
failures exit with code 2. The command layer turns any LevigravError into a
one-line JSON record on standard error.
"""

from typing import Dict


class LevigravError(Exception):
    """Base class for toolkit errors."""

    exit_code = 1

    def to_record(self) -> Dict:
        return {
            "error": type(self).__name__,
            "message": str(self),
            "exit_code": self.exit_code,
        }


class ValidationError(LevigravError):
    exit_code = 1


class DomainError(ValidationError, ValueError):
    """An input lies outside the physical domain of an operation."""


class ConfigError(ValidationError):
    pass


class TraceFormatError(ValidationError):
    """Malformed trace header or body, or rejected ingestion rows."""

    def __init__(self, message: str, rows=None):
        super().__init__(message)
        self.rows = list(rows) if rows is not None else []

    def to_record(self) -> Dict:
        record = super().to_record()
        if self.rows:
            record["rows"] = self.rows
        return record


class CalibrationMissingError(ValidationError):
    pass


class NumericalError(LevigravError):
    exit_code = 2


class ConvergenceError(NumericalError):
    pass


class IntegratorStabilityError(NumericalError):
    def __init__(self, message: str, required_sample_rate: float):
        super().__init__(message)
        self.required_sample_rate = required_sample_rate


class NoEquilibriumError(NumericalError):
    pass


class SingularResponseError(NumericalError):
    pass


class AliasingError(NumericalError):
    pass


def require_positive(**values: float) -> None:
    """Raise DomainError naming the first value that is not strictly positive."""
    for name, value in values.items():
        if not value > 0:
            raise DomainError(f"{name} must be > 0, got {value!r}")


def require_non_negative(**values: float) -> None:
    for name, value in values.items():
        if not value >= 0:
            raise DomainError(f"{name} must be >= 0, got {value!r}")

"""Error Handler - exception hierarchy and user-facing error messages."""

from typing import Optional


class PmuEventError(Exception):
    """Base class for every error raised by the toolkit."""


# ============================================================================
# Data errors (bad input files, degenerate data) - CLI exit code 2
# ============================================================================


class DataError(PmuEventError):
    """Input data cannot be used as given."""


class ParseError(DataError):
    """A file row could not be parsed."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class FormatError(DataError):
    """A file parsed but violates the format contract (ordering, header, grid)."""


class UnsupportedRateError(DataError):
    """Inferred sample rate is neither 30 nor 60 frames/s."""


class OutOfRangeError(DataError):
    """A timestamp or index lies outside the available span."""


class InsufficientDataError(DataError):
    """Too few valid samples for a robust statistic."""


class NoOnsetError(DataError):
    """No PMU produced a usable onset candidate."""


class DegenerateDatasetError(DataError):
    """Training data cannot support a classifier (e.g. a single class)."""


class DefectPlacementError(DataError):
    """Requested missing-data runs cannot be placed without overlap."""


class EmptyInputError(DataError):
    """An operation received an empty collection."""


class InputTooSmallError(DataError):
    """Spatial input is smaller than the network can pool."""


class CheckpointError(DataError):
    """A checkpoint could not be loaded."""


class ChecksumError(CheckpointError):
    """Checkpoint payload does not match its checksum (corrupt or truncated)."""


class VersionMismatchError(CheckpointError):
    """Checkpoint was written by an unsupported format version."""


class ConfigMismatchError(CheckpointError):
    """Checkpoint tensors do not fit the expected model configuration."""


# ============================================================================
# Programming / parameter errors
# ============================================================================


class InvalidParameterError(PmuEventError, ValueError):
    """An argument is outside its legal range."""


class ShapeError(PmuEventError, ValueError):
    """Tensor shapes do not agree."""


class InvalidBatchError(PmuEventError, ValueError):
    """Batch is too small for the requested mode."""


class ConfigError(PmuEventError, ValueError):
    """Configuration is inconsistent or malformed (CLI exit code 1)."""


class UsageError(PmuEventError):
    """Command-line arguments are missing or inconsistent (CLI exit code 1)."""


def format_error_message(
    operation: str,
    error: Exception,
    context: Optional[dict] = None,
    suggestion: Optional[str] = None,
) -> str:
    """
    Format a user-friendly error message.

    Args:
        operation: What operation was being performed (e.g., "Parsing signal CSV")
        error: The exception that occurred
        context: Additional context (e.g., {"file": "signals.csv", "pmu_id": "B07"})
        suggestion: Optional suggestion for how to fix the issue

    Returns:
        Formatted error message
    """
    error_type = type(error).__name__
    context_str = ""
    if context:
        context_parts = [f"{k}={v}" for k, v in context.items()]
        context_str = f" ({', '.join(context_parts)})"

    message = f"{operation} failed{context_str}\n"
    message += f"   Error: {error_type}: {error}"
    if suggestion:
        message += f"\n   Suggestion: {suggestion}"
    return message


def get_suggestion(error: Exception) -> Optional[str]:
    """
    Get a suggestion for how to recover from a known failure.

    Args:
        error: The exception

    Returns:
        Suggestion string or None
    """
    if isinstance(error, ParseError):
        return "Check the row against the documented CSV schema in docs/formats.md."
    if isinstance(error, UnsupportedRateError):
        return "Only 30 and 60 frames/s archives are supported; resample upstream."
    if isinstance(error, ChecksumError):
        return "The checkpoint is corrupt or truncated. Re-run `train` to regenerate it."
    if isinstance(error, (VersionMismatchError, ConfigMismatchError)):
        return "The checkpoint was produced by a different build or model config."
    if isinstance(error, InputTooSmallError):
        return "Too much data was removed from the window; the network needs a larger graph."
    if isinstance(error, DegenerateDatasetError):
        return "Generate or select data covering at least two event classes."
    if isinstance(error, ConfigError):
        return "Check config keys and values (see `pmu-event-id --help`)."
    if isinstance(error, UsageError):
        return "Run `pmu-event-id <command> --help` for the accepted options."
    return None

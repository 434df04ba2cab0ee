"""Exception types shared across the pipeline."""


class KpcastError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(KpcastError):
    """A text record could not be parsed; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SchemaError(KpcastError):
    """Input is missing mandatory columns or has mismatched structure."""


class ValidationError(KpcastError):
    """Data violates an invariant (ordering, ranges, duplicates)."""


class ConfigError(KpcastError):
    """A configuration value is inconsistent or refers to missing data."""


class DimensionError(KpcastError):
    """Array shapes do not line up for the requested operation."""


class MergeError(KpcastError):
    """Tables cannot be merged (empty intersection, colliding columns)."""


class EmptyInputError(KpcastError):
    """An operation that needs data received an empty table."""


class UnfillableColumnError(KpcastError):
    """A column has no observed values to interpolate from."""


class WindowUnderflowError(KpcastError):
    """Not enough rows to cut a single window; reports the required minimum."""


class RankError(KpcastError):
    """Requested more principal components than the data supports."""


class LeakageError(KpcastError):
    """A forecast-time sample touches data after its fine-tune boundary."""

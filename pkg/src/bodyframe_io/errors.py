"""Exception hierarchy shared across the toolkit.

Three failure families map onto the CLI exit codes: configuration
problems (exit 2), data problems (exit 3), and numerical problems
(exit 4). Everything derives from ValueError so callers that do not
care about the taxonomy can still catch a single base type.
"""


class ConfigError(ValueError):
    """Bad or inconsistent run configuration (unknown key, bad value)."""


class DataError(ValueError):
    """Malformed or inconsistent input data."""


class ParseError(DataError):
    """A file could not be parsed; message carries file and line number."""


class TimestampOrderError(DataError):
    """Timestamps are not strictly increasing."""


class InsufficientDataError(DataError):
    """Fewer samples than an operation requires."""


class NumericalError(ValueError):
    """A numerical contract was violated (singularity, invalid rotation)."""


class InvalidRotationError(NumericalError):
    """Matrix is not a rotation within tolerance."""


class SingularUpdateError(NumericalError):
    """Innovation covariance is numerically singular."""


class DegenerateInputError(NumericalError):
    """Input is degenerate for the requested decomposition."""

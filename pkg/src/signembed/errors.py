"""Exception types shared across the package.

IO problems (missing files, truncated payloads) surface as ``OSError``
subclasses so callers can treat them like any other filesystem failure.
"""


class ValidationError(ValueError):
    """Input violates a documented precondition or invariant."""


class FormatError(ValidationError):
    """A file does not follow the expected binary or text format."""


class DegenerateInputError(ValidationError):
    """Input is well-formed but too degenerate for the requested transform."""


class TruncatedFileError(OSError):
    """A binary payload ended before the header said it would."""

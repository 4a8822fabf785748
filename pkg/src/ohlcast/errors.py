"""Exception types shared across the toolkit."""


class OhlcastError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(OhlcastError):
    """Inconsistent configuration: mismatched dimensions, missing pieces."""


class DataError(OhlcastError):
    """Structurally invalid data: out-of-order dates, duplicates, bad splits."""


class ParseError(DataError):
    """Malformed input file. Carries the 1-based line number when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)

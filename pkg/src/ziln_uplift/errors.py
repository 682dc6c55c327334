"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of the operation."""


class ConfigurationError(ValueError):
    """A configuration is inconsistent or cannot be satisfied."""


class ShapeError(ValueError):
    """Array dimensions do not agree."""


class ParseError(ValueError):
    """A data file is malformed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ZilnOverflowError(OverflowError):
    """exp(mu + sigma**2 / 2) is not representable in double precision."""

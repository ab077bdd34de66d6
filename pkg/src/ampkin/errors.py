"""Exception hierarchy shared across the package."""


class AmpkinError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(AmpkinError):
    """An input value violates a documented precondition (non-finite, negative, ...)."""


class DegenerateRotationError(AmpkinError):
    """A rotation representation cannot be decoded (zero sentinel, parallel 6D columns)."""


class DegenerateGeometryError(AmpkinError):
    """A point configuration is too degenerate for the requested alignment."""


class SchemaError(AmpkinError):
    """A file or record violates its declared schema or invariants."""


class ConfigurationError(AmpkinError):
    """Configuration values are inconsistent or out of range."""

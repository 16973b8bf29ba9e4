class EngineError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(EngineError):
    """Bad argument values or inconsistent dimensions."""


class TensorFormatError(EngineError):
    """Malformed tensor container file."""


class FixtureError(EngineError):
    """Broken fixture: missing files, bad manifest, invalid sample data."""

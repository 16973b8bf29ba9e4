"""Exception types for the extractor."""


class ExtractorError(Exception):
    """Base class for everything raised on purpose."""


class SliceError(ExtractorError):
    """The dataset slice file is missing, unreadable, or malformed."""


class BackendError(ExtractorError):
    """An encoder backend cannot be built or cannot process an input."""

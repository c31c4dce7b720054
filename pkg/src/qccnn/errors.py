"""Exception types shared across the package."""


class QCCNNError(Exception):
    """Base class for all package errors."""


class ConfigurationError(QCCNNError, ValueError):
    """Invalid configuration: sizes, counts or settings out of range."""


class UsageError(QCCNNError, ValueError):
    """An API was called with arguments that violate its preconditions."""


class FormatError(QCCNNError):
    """A binary file (dataset container or checkpoint) could not be parsed."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class UnsupportedVersionError(FormatError):
    pass


class DivergenceError(QCCNNError):
    """Training produced a non-finite loss."""

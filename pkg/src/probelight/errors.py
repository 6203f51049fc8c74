"""Exception hierarchy shared by all probelight modules."""


class ProbelightError(Exception):
    """Base class for all errors raised by this package."""


class UsageError(ProbelightError, ValueError):
    """Caller passed arguments that violate a documented precondition."""


class FormatError(ProbelightError):
    """A file or byte stream does not conform to its declared format."""


class DegradedInputWarning(UserWarning):
    """Input is usable but known to reduce output quality."""

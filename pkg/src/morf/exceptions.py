class MORFError(Exception):
    """Base class for errors raised by this package."""


class InputShapeError(MORFError, ValueError):
    pass


class InvalidStateError(MORFError, RuntimeError):
    """A cache or model does not match the call it was passed to."""


class ConfigurationError(MORFError, ValueError):
    pass


class DataError(MORFError, ValueError):
    """Malformed dataset contents or layout."""


class NumericalError(MORFError, FloatingPointError):
    """Training produced a non-finite value."""

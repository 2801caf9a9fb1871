"""Exception types shared across the package."""


class ShapeError(ValueError):
    pass


class ConfigError(ValueError):
    pass


class TraceError(ValueError):
    """A ForwardTrace does not belong to the batch it is used with."""


class ParseError(ValueError):
    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class DivergenceError(FloatingPointError):
    """Raised by an optimizer when it receives non-finite gradients.

    ``payload`` carries diagnostic info (step count, number of bad entries, ...).
    """

    def __init__(self, message, payload=None):
        super().__init__(message)
        self.payload = payload or {}

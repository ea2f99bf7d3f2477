"""Exception types shared across the package."""


class ScvaeError(Exception):
    pass


class DimensionError(ScvaeError, ValueError):
    pass


class ConfigError(ScvaeError, ValueError):
    pass


class DomainError(ScvaeError, ValueError):
    pass


class NumericalError(ScvaeError, ArithmeticError):
    def __init__(self, message, last_estimate=None):
        super().__init__(message)
        self.last_estimate = last_estimate


class FormatError(ScvaeError, ValueError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset

"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class GekoError(Exception):
    exit_code = 1


class ConfigError(GekoError):
    exit_code = 2


class DimensionError(GekoError, ValueError):
    exit_code = 2


class ParameterError(GekoError, ValueError):
    exit_code = 2


class ParseError(GekoError, ValueError):
    exit_code = 2

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class RankError(GekoError, ArithmeticError):
    """Raised when a matrix that must have full (row) rank does not."""

    exit_code = 3

    def __init__(self, message, rank=None, required=None):
        super().__init__(message)
        self.rank = rank
        self.required = required


class DivergenceError(GekoError, ArithmeticError):
    """Raised when an iteration produces non-finite values."""

    exit_code = 4

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step

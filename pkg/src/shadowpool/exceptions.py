"""Exception hierarchy.

Every error raised by the toolkit derives from :class:`ShadowPoolError` so
callers (and the CLI, which maps classes to exit codes) can catch broadly.
"""


class ShadowPoolError(Exception):
    exit_code = 1


class ShapeError(ShadowPoolError, ValueError):
    exit_code = 3


class InputError(ShadowPoolError, ValueError):
    exit_code = 3


class StateError(ShadowPoolError, RuntimeError):
    exit_code = 4


class NumericError(ShadowPoolError, ArithmeticError):
    exit_code = 5


class ResourceError(ShadowPoolError, MemoryError):
    exit_code = 6


class InsufficientModelsError(ShadowPoolError, ValueError):
    exit_code = 7


class ParseError(ShadowPoolError, ValueError):
    exit_code = 8

    def __init__(self, message, line=None, field=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.line = line
        self.field = field


class FormatVersionError(ParseError):
    exit_code = 9


class DependencyError(ShadowPoolError):
    """A pipeline stage ran before the stage it depends on."""

    exit_code = 10

    def __init__(self, message, stage=None):
        super().__init__(message)
        self.stage = stage


class ConfigError(ShadowPoolError, ValueError):
    """Schema violation; ``field`` is the dotted path of the offending key."""

    exit_code = 11

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field

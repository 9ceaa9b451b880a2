"""Exception hierarchy. CLI exit codes key off these classes."""


class TrifuseError(Exception):
    """Base class for data and validation errors (CLI exit code 2)."""


class DimensionMismatchError(TrifuseError, ValueError):
    pass


class TrifuseIOError(TrifuseError, OSError):
    pass


class FormatError(TrifuseError):
    pass


class MalformedHeaderError(FormatError):
    pass


class InvalidDimensionsError(FormatError, ValueError):
    pass


class MalformedPayloadError(FormatError):
    pass


class NonFiniteError(FormatError, ValueError):
    pass


class SingularIntrinsicsError(TrifuseError, ValueError):
    pass


class ConvergenceError(TrifuseError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3g})")
        self.residual = residual


class MetricUnavailableError(TrifuseError):
    pass


class SchemaError(TrifuseError):
    pass

"""Exception hierarchy shared by the pipeline stages."""


class PacketGenError(Exception):
    """Base class for all package errors."""


class DataError(PacketGenError, ValueError):
    """Input data is malformed, inconsistent or degenerate."""


class TraceParseError(DataError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class TraceValidationError(DataError):
    pass


class DegenerateDataError(DataError):
    pass


class ModelFormatError(DataError):
    pass


class NumericalError(PacketGenError, ArithmeticError):
    """A numerical stage produced non-finite values."""

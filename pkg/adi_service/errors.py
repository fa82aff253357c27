"""
Exception hierarchy for the ADI service.

Every error carries the process exit code the CLI reports for it.
"""

from typing import Optional


class ADIError(Exception):
    """Base class for all ADI service errors"""

    exit_code: int = 1


class ConfigurationError(ADIError, ValueError):
    """Invalid parameters, settings or scenario files"""

    exit_code = 2


class DataError(ADIError, ValueError):
    """Inconsistent, missing or malformed measurement data"""

    exit_code = 3


class InsufficientDataError(DataError):
    pass


class ParseError(DataError):
    """A file could not be parsed; ``line`` is 1-based when known"""

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        self.path = path
        self.line = line
        location = path or ''
        if line is not None:
            location = f"{location}:{line}" if location else f"line {line}"
        super().__init__(f"{location}: {message}" if location else message)


class UnsupportedVersionError(DataError):
    pass


class UnknownPairError(DataError, LookupError):
    pass


class NumericalError(ADIError, ArithmeticError):
    exit_code = 4


class EstimationError(NumericalError):
    pass


class DomainError(NumericalError, ValueError):
    pass


class SingularSystemError(NumericalError):
    def __init__(self, message: str, bin_index: int):
        self.bin_index = bin_index
        super().__init__(message)


class LocalizationUndefinedError(NumericalError):
    pass


class CaseFailedError(ADIError):
    """Wraps an error raised while running one scenario case"""

    def __init__(self, label: str, cause: ADIError):
        self.label = label
        self.cause = cause
        self.exit_code = cause.exit_code
        super().__init__(f"case '{label}': {cause}")

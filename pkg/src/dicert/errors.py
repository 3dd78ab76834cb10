"""Exception types raised across the package."""


class DicertError(Exception):
    """Base class for all package errors."""


class MalformedBehaviorError(DicertError, ValueError):
    """A probability table has the wrong shape or missing entries."""


class EmptyDataError(DicertError, ValueError):
    pass


class TooLargeError(DicertError, ValueError):
    """An enumeration would exceed the configured size guard."""


class ScenarioMismatchError(DicertError, ValueError):
    pass


class UnsupportedError(DicertError, ValueError):
    """The request is outside what this package implements."""


class UndefinedBellFunctionError(DicertError, ValueError):
    """A trial used settings outside the support of the settings distribution."""


class SolverError(DicertError, RuntimeError):
    """A conic solve did not return a usable optimum."""

    def __init__(self, message, status=None):
        super().__init__(message)
        self.status = status


class TrialFormatError(DicertError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line

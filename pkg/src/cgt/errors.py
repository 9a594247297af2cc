"""Exception types raised across the package."""


class CGTError(Exception):
    """Base class for all package errors."""


class ConnectivityError(CGTError):
    pass


class WeightError(CGTError):
    pass


class NoConvergence(CGTError):
    pass


class DimensionMismatch(CGTError, ValueError):
    pass


class NonFiniteInput(CGTError, ValueError):
    pass


class EmptyInput(CGTError, ValueError):
    pass


class NonPositiveC(CGTError, ValueError):
    pass


class UnknownMinimum(CGTError):
    pass


class TooManyAgents(CGTError, ValueError):
    pass


class ParseError(CGTError, ValueError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class NonFiniteState(CGTError):
    """An iterate or tracking variable became inf/nan at iteration ``k``."""

    def __init__(self, k: int, what: str = "state"):
        super().__init__(f"non-finite {what} at iteration {k}")
        self.k = k
        self.what = what


class ConfigError(CGTError):
    def __init__(self, field: str, reason: str):
        super().__init__(f"{field}: {reason}")
        self.field = field
        self.reason = reason

"""Exception types shared across the package."""


class DCBMError(Exception):
    """Base class for all package errors."""


class InvalidArgument(DCBMError, ValueError):
    pass


class DomainError(DCBMError, ValueError):
    """Input outside the mathematical domain of a function (ln of 0, negative price...)."""


class InsufficientData(DCBMError):
    pass


class SolvencyViolation(DCBMError):
    """A policy asked to spend more than the treasury holds."""


class UndefinedInput(DCBMError, ValueError):
    pass


class AnalysisError(DCBMError):
    pass


class NoFeasibleGains(DCBMError):
    pass


class ParseError(DCBMError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(DCBMError, ValueError):
    """Invalid scenario configuration. ``key`` names the offending entry."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key

"""Exception hierarchy. Each error carries the CLI exit status it maps to."""


class FlagFedError(Exception):
    exit_code = 1


class ConfigurationError(FlagFedError, ValueError):
    exit_code = 3


class IntegrityError(FlagFedError, ValueError):
    exit_code = 4


class ParseError(IntegrityError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DivergenceError(FlagFedError, ArithmeticError):
    exit_code = 5


class DimensionError(FlagFedError, ValueError):
    pass


class DomainError(FlagFedError, ValueError):
    pass


class DegenerateDistributionError(FlagFedError, ValueError):
    pass


class DegenerateWeightsError(FlagFedError, ValueError):
    pass


class UndefinedMetricError(FlagFedError, ValueError):
    pass

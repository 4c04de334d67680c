"""Exception hierarchy. Each class maps to a distinct CLI exit code."""


class SuperchemError(Exception):
    exit_code = 1


class ParameterError(SuperchemError, ValueError):
    exit_code = 2


class ConfigError(SuperchemError, ValueError):
    exit_code = 2


class DivergenceError(SuperchemError):
    exit_code = 3

    def __init__(self, message, tau=None):
        super().__init__(message)
        self.tau = tau


class CapacityError(SuperchemError):
    exit_code = 4


class AccuracyError(SuperchemError):
    exit_code = 5

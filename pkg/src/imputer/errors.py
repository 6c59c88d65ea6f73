class ImputerError(Exception):
    exit_code = 1


class InvalidInput(ImputerError, ValueError):
    exit_code = 2


class ConfigurationError(ImputerError, ValueError):
    exit_code = 2


class OracleScaleError(ImputerError, ValueError):
    exit_code = 2


class UsageError(ImputerError, RuntimeError):
    exit_code = 2


class NumericFailure(ImputerError, ArithmeticError):
    exit_code = 3


class Infeasible(ImputerError, ValueError):
    exit_code = 4

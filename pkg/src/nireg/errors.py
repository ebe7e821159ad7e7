"""Exception hierarchy. ``exit_code`` is what the CLI returns for each family."""


class NiregError(Exception):
    exit_code = 1


class ConfigError(NiregError, ValueError):
    exit_code = 2


class DataError(NiregError, ValueError):
    exit_code = 3


class NumericError(NiregError, ArithmeticError):
    exit_code = 4

"""Exception hierarchy shared across the package."""


class EfdmError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(EfdmError, ValueError):
    """Input violates a documented precondition."""


class NumericError(EfdmError, ArithmeticError):
    """A numerical routine could not produce a trustworthy answer."""


class FitFailureError(EfdmError):
    """A model (typically a Gaussian mixture) could not be fit to the data."""


class DataFormatError(EfdmError):
    """A data file could not be parsed."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)


class ConfigError(InvalidInputError):
    """An experiment configuration is invalid; ``field`` names the offending entry."""

    def __init__(self, message, field=None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)

"""Exception types shared across the package.

Every error raised on purpose by the library derives from PlcMimoError so
callers (and the CLI) can map failures to exit codes without matching on
message strings.
"""


class PlcMimoError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(PlcMimoError):
    """An array or grid has a shape/size that the operation rejects."""


class DegenerateChannelError(PlcMimoError):
    """A channel entry is exactly zero, so log-magnitude is undefined."""


class ParameterError(PlcMimoError):
    """A model parameter, parameter file, or config value is invalid."""


class FormatError(PlcMimoError):
    """A data file is malformed.

    Parameters
    ----------
    message : str
        Human-readable description.
    line : int or None
        1-based line number of the offending record, when known.
    """

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NumericalError(PlcMimoError):
    """A numerical routine failed to converge or produced invalid output."""


class InsufficientDataError(PlcMimoError):
    """Too few realizations (or samples) for the requested estimate."""


class UndefinedStatisticError(PlcMimoError):
    """A statistic is undefined for the data, e.g. correlation at a
    zero-variance coordinate.  The message names the coordinate."""

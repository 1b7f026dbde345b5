"""Exception hierarchy shared by every module."""


class NomadLabError(Exception):
    """Base class for all package errors."""


class ConfigError(NomadLabError, ValueError):
    """Invalid configuration or arguments."""


class ShapeError(NomadLabError, ValueError):
    """Array shapes do not match what an operation expects."""


class TrainingError(NomadLabError, RuntimeError):
    """Training produced a non-finite loss or gradient.

    ``iteration`` is the index of the offending iteration, or None when the
    failure happened outside the training loop.
    """

    def __init__(self, message, iteration=None):
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)
        self.iteration = iteration


class SolverError(NomadLabError, RuntimeError):
    """Base for PDE solver failures."""


class CFLError(SolverError):
    """Time step violates the CFL bound."""


class InstabilityError(SolverError):
    """Solver produced a non-positive depth or non-finite value."""


class StatisticsError(NomadLabError, ValueError):
    """Not enough samples for a statistic."""


class FormatError(NomadLabError, ValueError):
    """Malformed container file. ``offset`` is the byte position of the fault."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} at byte offset {offset}"
        super().__init__(message)
        self.offset = offset

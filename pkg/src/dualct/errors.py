"""Exception hierarchy shared across the package."""


class DualCTError(Exception):
    """Base class for all package errors."""


class ConfigError(DualCTError):
    """Invalid configuration: bad geometry, parameter constraints, mismatched grids."""


class InputError(DualCTError):
    """Invalid runtime input: non-finite values, shape mismatches."""


class FormatError(DualCTError):
    """Malformed file on disk (weight files, array sidecars, configs)."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericalError(DualCTError):
    """Non-finite intermediate or failed numerical procedure."""


class SolverError(NumericalError):
    """Solver failure; carries the iterate log collected so far."""

    def __init__(self, message, log=None):
        super().__init__(message)
        self.log = log

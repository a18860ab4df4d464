"""Exception hierarchy shared by all modules.

Each class carries the CLI exit code it maps to, so the front end can
translate failures without string matching.
"""


class HiggsLabError(Exception):
    exit_code = 1


class InputError(HiggsLabError, ValueError):
    """Invalid or inconsistent input data."""
    exit_code = 2


class DomainError(InputError):
    """Argument outside the mathematical domain of a function."""


class NonSimpleZeroError(InputError):
    """The polynomial has a repeated root."""


class RegionError(InputError):
    """A point or region lies outside where a construction is certified."""


class FrameError(InputError):
    """A quantity was requested in a frame that is not defined there."""


class ConvergenceError(HiggsLabError, RuntimeError):
    """An iterative solver failed to converge.

    Attributes
    ----------
    residual : float
        Residual norm at the last iterate.
    iterations : int
        Number of iterations performed.
    """
    exit_code = 3

    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(f"{message} (residual={residual:.3e}, iterations={iterations})")
        self.residual = residual
        self.iterations = iterations


class GeodesicError(HiggsLabError, RuntimeError):
    """Geodesic integration broke down away from any zero."""
    exit_code = 3

    def __init__(self, message, position=None):
        super().__init__(f"{message} at z={position}")
        self.position = position


class ScheduleError(HiggsLabError, ValueError):
    """Cutoff schedule incompatible with the threshold of the differential."""
    exit_code = 4

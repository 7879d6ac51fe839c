"""Exception hierarchy shared by every module."""


class CritNLSError(Exception):
    """Base class for all errors raised by critnls."""


class ParameterError(CritNLSError, ValueError):
    """A model parameter lies outside the admissible hypothesis range."""


class DomainError(CritNLSError, ValueError):
    """An operation precondition is violated."""


class GridMismatchError(CritNLSError, ValueError):
    """Two fields (or a field and the parameters) live on incompatible grids."""


class ResolutionError(CritNLSError):
    """The grid cannot faithfully represent the requested field."""


class ShootingError(CritNLSError):
    """Bisection on the central value failed; carries the final bracket."""

    def __init__(self, message, lo=None, hi=None, iterations=None):
        super().__init__(message)
        self.lo = lo
        self.hi = hi
        self.iterations = iterations

class RobinError(Exception):
    """Base class for errors raised by this package."""


class MeshError(RobinError, ValueError):
    pass


class SourceError(RobinError, ValueError):
    pass


class IncompatibleSource(RobinError):
    """The source has nonzero mean, so the Neumann problem has no solution."""


class CompatibleSource(RobinError):
    """The source has zero mean; the incompatible-limit constant is undefined."""


class NonfiniteEnergy(RobinError):
    pass


class MaxIterationsExceeded(RobinError):
    """Raised when a solver runs out of iterations.

    ``best`` holds the last accepted iterate as a :class:`Solution`.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class EmptyWindow(RobinError):
    pass


class RegimeMismatch(RobinError):
    pass


class NoConvergence(RobinError):
    pass


class ConfigError(RobinError, ValueError):
    pass

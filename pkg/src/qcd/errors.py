"""Exception hierarchy shared by every qcd module."""


class QCDError(Exception):
    """Base class for all qcd errors."""


class DomainError(QCDError, ValueError):
    """A mathematical quantity is undefined or non-finite for the given inputs."""


class UsageError(QCDError, ValueError):
    """An operation was called outside its contract (bad arguments, wrong state)."""


class UnsupportedInstanceError(QCDError):
    """The exact oracle cannot handle this instance (e.g. non-lattice LLRs at large T)."""


class ConvergenceError(QCDError):
    """A numerical optimizer failed; ``best`` holds the best iterate seen."""

    def __init__(self, message: str, best: tuple[float, float] | None = None):
        super().__init__(message)
        self.best = best

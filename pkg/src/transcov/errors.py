class TranscovError(Exception):
    """Base class for library errors."""


class CapExceeded(TranscovError):
    """A dense/oracle code path was asked to exceed its size cap."""


class NumericalError(TranscovError):
    """A guarded numerical condition failed (non-PD input, bad root, ...)."""


class ConvergenceError(TranscovError):
    """An iterative solver hit its cap.

    Carries the last iterate so callers can inspect or persist partial
    results (the CLI writes them with a failure flag).
    """

    def __init__(self, message, iterations=None, residual=None, payload=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual
        self.payload = payload

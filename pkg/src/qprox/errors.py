"""Package exception types."""


class QproxError(Exception):
    """Base class for package errors."""


class ParameterError(QproxError):
    """A precondition on user-supplied parameters is violated."""


class GenerationError(QproxError):
    """Random construction exhausted its retry budget."""


class NonConvergenceError(QproxError):
    """An iterative solver hit its iteration cap before its tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ProtocolError(QproxError):
    """Wire-level inconsistency (bad frame, dimension desync)."""


class FitRefusedError(QproxError):
    """Not enough usable points to fit a decay rate."""


class ConfigError(QproxError):
    """Malformed configuration input; carries the offending line."""

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line

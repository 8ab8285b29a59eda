# fri_jsr/errors.py


class FriJsrError(Exception):
    """Base class for every error raised by fri_jsr."""


class ConfigError(FriJsrError):
    pass


class DimensionError(FriJsrError, ValueError):
    """Array shapes that must agree do not."""


class SingularSystemError(FriJsrError):
    """A linear system (Vandermonde, Fisher information) is not invertible."""


class TrainingDivergedError(FriJsrError):
    """Loss became non-finite during LISTA training."""


class JsrError(FriJsrError):
    pass


class FormatError(FriJsrError):
    """A persisted artifact does not match its schema."""

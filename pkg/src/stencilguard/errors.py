"""Exception types raised across the package."""

from __future__ import annotations


class StencilGuardError(Exception):
    pass


class DimensionMismatch(StencilGuardError, ValueError):
    pass


class MissingLedger(StencilGuardError):
    """Boundary terms were required by the interpolation but never recorded."""


class Uncorrectable(StencilGuardError):
    """Detected corruption could not be localized or reconstructed.

    ``state`` optionally carries the protected state as it stood when the
    failure was found, so callers running in online mode can log and carry on.
    """

    def __init__(self, message: str, state=None, reports=None):
        super().__init__(message)
        self.state = state
        self.reports = reports or []


class PersistentError(StencilGuardError):
    """A recomputed block failed detection again after rollback."""


class BitOutOfRange(StencilGuardError, ValueError):
    pass


class InvalidParams(StencilGuardError, ValueError):
    pass


class LengthMismatch(StencilGuardError, ValueError):
    pass


class ConfigError(StencilGuardError, ValueError):
    pass

"""Exception hierarchy for rtrecon."""

from __future__ import annotations


class RtreconError(Exception):
    """Base class for all rtrecon errors."""


class InvalidArgumentError(RtreconError, ValueError):
    """An argument violates a documented precondition."""


class IterationLimitError(RtreconError, RuntimeError):
    """An iterative solver hit its sweep/iteration cap before converging."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class NumericalError(RtreconError, RuntimeError):
    """A numerical routine produced non-finite values or failed to factor.

    ``diagnostics`` carries whatever state is useful for postmortems
    (current iterate, condition estimates, ...).
    """

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class TruncationError(RtreconError, ValueError):
    """Requested truncation level reaches into the numerical null space."""


class ConfigError(RtreconError, ValueError):
    """A run configuration failed schema or semantic validation."""


class CacheError(RtreconError):
    """Base class for SVD cache file problems."""


class CacheFormatError(CacheError):
    """File does not start with the expected magic bytes."""


class CacheVersionError(CacheError):
    """File carries an unsupported format version."""


class CacheHashError(CacheError):
    """File was built for different mesh/angular/mode/coefficient inputs."""


class CacheTruncatedError(CacheError):
    """File is shorter than its header promises."""

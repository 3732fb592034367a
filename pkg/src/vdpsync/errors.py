"""Exception hierarchy shared by every vdpsync module."""

from __future__ import annotations


class VdpSyncError(Exception):
    """Base class for all library errors."""


class DomainError(VdpSyncError, ValueError):
    """Invalid argument: bad shape, non-finite value, unknown edge, ..."""


class NumericError(VdpSyncError):
    """A numerical procedure failed to produce a usable result."""


class IntegrationBlowup(NumericError):
    """Non-finite state produced by the integrator."""

    def __init__(self, t: float, message: str | None = None):
        self.t = float(t)
        super().__init__(message or f"integration blew up at t={self.t:.6g}")


class DivergenceError(IntegrationBlowup):
    """Coupled network state diverged during phase two."""


class NoCycleError(NumericError):
    """No Poincare section crossing found within the search budget."""


class NonConvergenceError(NumericError):
    """Successive period estimates disagree by more than the tolerance."""


class PhaseOneTimeout(NumericError):
    """Strong static coupling did not synchronize within the time budget."""


class SampleOptimizationError(NumericError):
    """Gain optimization failed at a specific sample index."""

    def __init__(self, index: int, cause: Exception):
        self.index = int(index)
        self.cause = cause
        super().__init__(f"sample {index}: {cause}")


class ConfigError(VdpSyncError):
    """Configuration file could not be parsed or validated."""

"""
Exception hierarchy for the JKO laboratory.

Every failure raised by the numerical code derives from ``JkoLabError`` so the
runner can map it to exit code 1 while pydantic validation problems map to 2.
"""
from __future__ import annotations


class JkoLabError(Exception):
    """Base class for all laboratory errors."""


class RegimeError(JkoLabError):
    """Diffusion exponent, time step or dimension outside the validity regime."""


class EntropyDomainError(JkoLabError, ValueError):
    """f_m or the pressure evaluated on zero density with m <= 1."""


class GridError(JkoLabError, ValueError):
    """Degenerate grids, bad bounds, windows touching the boundary."""


class QuantileError(JkoLabError, ValueError):
    """Mismatched quantile resolutions or non-monotone maps."""


class ConvergenceError(JkoLabError):
    """An iterative solver stopped (cap or stall) before reaching tolerance."""

    def __init__(self, message: str, iterations: int | None = None, residual: float | None = None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class MassDriftError(JkoLabError):
    """Total mass of an iterate drifted away from 1."""


class OracleSizeError(JkoLabError, ValueError):
    """A brute-force oracle was asked to solve an instance above its cap."""


class ConfigError(JkoLabError):
    """A run configuration is unreadable or references missing inputs."""


__all__ = [
    "JkoLabError",
    "RegimeError",
    "EntropyDomainError",
    "GridError",
    "QuantileError",
    "ConvergenceError",
    "MassDriftError",
    "OracleSizeError",
    "ConfigError",
]

"""Exception types raised across spikelab."""

from __future__ import annotations


class SpikelabError(Exception):
    """Base class for all library errors."""


class DomainError(SpikelabError, ValueError):
    """A transform was evaluated at a point of the support (or outside its domain)."""


class PoleError(SpikelabError, ZeroDivisionError):
    """The reciprocal Cauchy transform hit a zero of G."""


class PreconditionError(SpikelabError, ValueError):
    pass


class IterationError(SpikelabError, RuntimeError):
    """Fixed-point iteration did not converge."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (residual={residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


class BoundaryExtensionError(SpikelabError, RuntimeError):
    """The im-offset ladder towards the real axis did not settle."""


class ConfigError(SpikelabError, ValueError):
    pass


class NumericalError(SpikelabError, RuntimeError):
    pass

"""Exception types shared across the package."""


class LorentzGasError(Exception):
    """Base class for all simulator errors."""


class InputError(LorentzGasError, ValueError):
    """Invalid argument or configuration value."""


class HorizonViolation(LorentzGasError):
    """A free flight exceeded the configured horizon bound."""

    def __init__(self, message, origin=None, direction=None):
        super().__init__(message)
        self.origin = origin
        self.direction = direction


class GrazingCollision(LorentzGasError):
    """Collision too close to tangency to reflect reliably."""


class IntegrationFailure(LorentzGasError):
    """Adaptive integrator could not reach the boundary (step underflow etc.)."""

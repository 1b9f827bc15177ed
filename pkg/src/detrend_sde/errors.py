"""Exception types shared across the package."""


class DetrendError(Exception):
    """Base class for package errors."""


class ConfigError(DetrendError):
    """Malformed or inconsistent experiment configuration."""


class AssumptionError(DetrendError):
    """Model parameters violate the standing assumptions (ellipticity,
    derivative bounds, bounded perturbation)."""


class FlowIntegrationError(DetrendError):
    """ODE integration failed; carries the last time reached."""

    def __init__(self, message: str, t_reached: float | None = None):
        super().__init__(message)
        self.t_reached = t_reached


class SingularJacobianError(DetrendError):
    """Flow Jacobian became numerically singular."""


class InversionError(DetrendError):
    """Broken-line inversion failed; carries the last residual norm."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual

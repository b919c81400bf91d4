"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid game, solver or experiment configuration."""


class DomainError(ValueError):
    """A point lies outside the domain required by an operation."""


class ProjectionError(RuntimeError):
    """Dykstra's iteration did not reach the requested tolerance.

    Attributes
    ----------
    residual : float
        Last change between successive sweeps.
    violation : float
        Largest halfspace violation of the last iterate.
    iterations : int
        Number of sweeps performed.
    """

    def __init__(self, message, residual, violation, iterations):
        super().__init__(message)
        self.residual = residual
        self.violation = violation
        self.iterations = iterations


class LipschitzEstimationError(RuntimeError):
    """Power iteration did not settle; carries the last Rayleigh quotient."""

    def __init__(self, message, estimate):
        super().__init__(message)
        self.estimate = estimate


class RoundAbort(RuntimeError):
    """A synchronous round could not complete because a node stayed silent."""

    def __init__(self, node):
        super().__init__(f"node {node} did not deposit a value for this round")
        self.node = node

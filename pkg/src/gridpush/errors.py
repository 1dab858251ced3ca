"""Exception types raised across the package."""


class BodyError(ValueError):
    """Invalid body description (geometry or parameter bounds)."""


class DisconnectedBodyError(BodyError):
    """Occupancy grid is not edge-connected.

    Carries the smallest connected component found so callers can report
    which cells are separated from the rest.
    """

    def __init__(self, component):
        self.component = sorted(component)
        super().__init__(
            f"occupancy is not edge-connected; isolated component: {self.component}"
        )


class LcpSolveError(RuntimeError):
    """Contact solve failed to reach the requested residual.

    The final residual is attached; retrying with a smaller time step
    usually helps.
    """

    def __init__(self, residual, iterations):
        self.residual = float(residual)
        self.iterations = int(iterations)
        super().__init__(
            f"contact solve did not converge after {iterations} iterations "
            f"(residual {residual:.3e}); consider a smaller dt"
        )


class InsufficientExcitationError(ValueError):
    """Dataset contains no moving steps, so gradients are undefined."""


class PlanningError(RuntimeError):
    """Push planning failed; carries the last reached state when available."""

    def __init__(self, message, last_state=None, explored=None):
        self.last_state = last_state
        self.explored = explored
        super().__init__(message)

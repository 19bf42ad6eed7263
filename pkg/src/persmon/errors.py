"""Exception hierarchy shared by all persmon modules."""


class PersmonError(Exception):
    """Base class for every error raised by persmon."""


class InvalidArgument(PersmonError, ValueError):
    pass


class ScenarioError(InvalidArgument):
    """A scenario or config document failed validation.

    ``field`` holds a dotted path such as ``targets[2].Q``.
    """

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class DivergenceError(PersmonError):
    def __init__(self, target_id, message="covariance integration diverged"):
        self.target_id = target_id
        super().__init__(f"target {target_id}: {message}")


class NeverVisitedError(PersmonError):
    """A target has zero sensing power over the whole period.

    The periodic steady state does not exist; a feasible initialization
    (``persmon init``) is required.
    """

    def __init__(self, target_id):
        self.target_id = target_id
        super().__init__(
            f"target {target_id} is never visited; initialize the trajectory so every target is sensed"
        )


class NonConvergenceError(PersmonError):
    def __init__(self, target_id, residual, periods):
        self.target_id = target_id
        self.residual = residual
        self.periods = periods
        super().__init__(
            f"target {target_id}: periodic Riccati iteration did not converge after "
            f"{periods} periods (residual {residual:.3e})"
        )


class ContractionError(PersmonError):
    def __init__(self, radius, target_id=None):
        self.radius = radius
        self.target_id = target_id
        where = "" if target_id is None else f"target {target_id}: "
        super().__init__(
            f"{where}transition matrix is not a contraction (spectral radius {radius:.6f})"
        )


class ProjectionError(PersmonError):
    pass


class PreconditionError(PersmonError):
    pass


class InfeasibleFitError(PersmonError):
    def __init__(self, agent, harmonics, violation):
        self.agent = agent
        self.harmonics = harmonics
        self.violation = violation
        super().__init__(
            f"agent {agent}: no feasible Fourier curve with {harmonics} harmonics "
            f"(worst waypoint violation {violation:.3e}); retry with a larger K, e.g. --harmonics {harmonics + 2}"
        )

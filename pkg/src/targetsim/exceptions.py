class UnsupportedProblemError(ValueError):
    """The problem lacks something the requested configuration needs."""


class StepDivergedError(RuntimeError):
    """A solver step produced non-finite values."""

    def __init__(self, t: float, dt: float, message: str = "step diverged"):
        super().__init__(f"{message} at t={t!r} with dt={dt!r}")
        self.t = t
        self.dt = dt

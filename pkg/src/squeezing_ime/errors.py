"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Input violates a documented precondition (shape, symmetry, range)."""


class UnstableSystemError(ValidationError):
    """The resolvent is singular or ill-conditioned: the system is at or above threshold."""

    def __init__(self, omega, cond):
        self.omega = float(omega)
        self.cond = float(cond)
        super().__init__(
            f"unstable system: resolvent ill-conditioned at omega={self.omega:.6g} "
            f"(condition number {self.cond:.3g})"
        )


class DecompositionError(RuntimeError):
    """A frequency-continued factorization could not be stitched at the grid resolution."""

    def __init__(self, message, interval=None):
        self.interval = interval
        if interval is not None:
            message = f"{message} in omega interval [{interval[0]:.6g}, {interval[1]:.6g}]; refine the grid"
        super().__init__(message)

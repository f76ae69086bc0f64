"""Exception types shared across gfflab."""


class GeometryError(ValueError):
    """Invalid torus parameters or mismatched field geometry."""


class EvenBaseError(GeometryError):
    """The base L of the torus must be odd and at least 3."""


class NonZeroMeanError(ValueError):
    """A field that must lie in the mean-zero space has a nonzero sum."""


class EllipticityError(ValueError):
    """Stiffness matrix does not define an elliptic operator."""


class SupportOverflowError(ValueError):
    """A scaled window does not fit inside the fundamental domain."""


class SamplerDivergence(RuntimeError):
    """MCMC produced a non-finite energy."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class FitError(ValueError):
    """A least-squares fit is under-determined or ill-conditioned."""

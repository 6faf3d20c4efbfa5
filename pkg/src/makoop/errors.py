"""Exception types raised across the package."""


class MakoopError(Exception):
    """Base class. ``code`` is a short machine-readable tag used by the CLI."""

    code = "error"

    def to_dict(self):
        return {"error": self.code, "message": str(self)}


class DimensionError(MakoopError, ValueError):
    code = "dimension_mismatch"

    def __init__(self, what, expected, actual):
        self.expected = expected
        self.actual = actual
        super().__init__(f"{what}: expected length {expected}, got {actual}")


class NonFiniteError(MakoopError, ValueError):
    code = "non_finite"


class DivergenceError(MakoopError, RuntimeError):
    code = "divergence"

    def __init__(self, time, norm, message=None):
        self.time = time
        self.norm = norm
        super().__init__(message or f"state norm {norm:.3g} exceeded limit at t={time:.6g}")


class FitError(MakoopError, RuntimeError):
    code = "fit_failed"


class SingularityError(MakoopError, ArithmeticError):
    code = "singular"

    def __init__(self, msg, condition=None):
        self.condition = condition
        super().__init__(msg)


class InstabilityError(MakoopError, ArithmeticError):
    code = "unstable"

    def __init__(self, msg, spectral_radius=None):
        self.spectral_radius = spectral_radius
        super().__init__(msg)


class ConvergenceError(MakoopError, RuntimeError):
    code = "nonconvergence"

    def __init__(self, msg, residual=None, iterations=None):
        self.residual = residual
        self.iterations = iterations
        super().__init__(msg)


class ConfigError(MakoopError, ValueError):
    code = "bad_config"

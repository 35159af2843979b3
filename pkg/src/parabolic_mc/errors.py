"""Exception hierarchy shared by all modules."""


class ParabolicMCError(Exception):
    """Base class for library errors."""


class ValidationError(ParabolicMCError, ValueError):
    """Malformed input (non-symmetric matrix, bad index, bad config...)."""


class EllipticityError(ParabolicMCError, ValueError):
    """Diffusion matrix eigenvalues fall outside the admissible band."""

    def __init__(self, message, *, location=None, step=None, path=None):
        super().__init__(message)
        self.location = location
        self.step = step
        self.path = path


class WeightOverflowError(ParabolicMCError, FloatingPointError):
    """Feynman-Kac weight became non-finite."""

    def __init__(self, message, *, path=None):
        super().__init__(message)
        self.path = path


class UnsupportedFieldError(ParabolicMCError, TypeError):
    """Operation needs an analytic kernel the field does not have."""


class DegenerateDirectionError(ParabolicMCError, ValueError):
    pass


class InsufficientSampleError(ParabolicMCError, ValueError):
    """Too few effective samples near a query point."""


class UnderpoweredError(ParabolicMCError, RuntimeError):
    """Monte Carlo differences cannot be distinguished from zero."""

    def __init__(self, message, *, recommended_n_paths=None):
        super().__init__(message)
        self.recommended_n_paths = recommended_n_paths


class GridTooNarrowError(ParabolicMCError, ValueError):
    """Finite-difference domain would leak non-negligible mass."""


class InfeasibleFitError(ParabolicMCError, RuntimeError):
    pass


class ConfigError(ParabolicMCError, ValueError):
    pass


class DivergenceWarning(RuntimeWarning):
    """A quadrature or estimate produced a non-finite value."""

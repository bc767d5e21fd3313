"""Error types shared across the package."""


class ConfigurationError(ValueError):
    """A grid, coefficient, or problem description violates a required bound."""


class SingularityError(ValueError):
    """Kernel evaluation requested below the resolution of the auxiliary grid."""


class NumericalError(RuntimeError):
    """A linear solve or time step failed for numerical reasons."""

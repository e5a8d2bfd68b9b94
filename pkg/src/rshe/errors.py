"""Exception types shared across the package."""


class DomainError(ValueError):
    """Input outside the admissible domain (non-finite values, bad ranges)."""


class GridMismatchError(ValueError):
    """Operands live on different grids."""


class AliasingError(ValueError):
    """Spectral truncation does not fit on the grid (K >= M)."""


class ConfigError(ValueError):
    """Run configuration failed validation."""


class NumericalError(RuntimeError):
    """A numerical procedure failed (non-convergence, overflow)."""


class PicardError(NumericalError):
    """Picard iteration did not contract; carries the ratio log."""

    def __init__(self, message, distances=None, ratios=None):
        super().__init__(message)
        self.distances = list(distances or [])
        self.ratios = list(ratios or [])

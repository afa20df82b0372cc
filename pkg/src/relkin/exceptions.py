"""Exception and warning types raised by relkin."""


class DomainError(ValueError):
    """An argument lies outside the domain where a quantity is defined."""


class SingularDiffusionError(DomainError):
    """The diffusion tensor cannot be built because the current drift is not timelike."""


class GridCoverageError(ValueError):
    """A quadrature grid loses too much probability mass to be trusted."""


class DefectiveSpectrumError(RuntimeError):
    """Eigenpairs could not be paired or biorthonormalized.

    The ``report`` attribute carries the diagnostics that triggered the failure.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report or {}


class PecletError(ValueError):
    """Grid Peclet number exceeds the limit for the central advection stencil."""


class InconsistentFieldWarning(UserWarning):
    """Electromagnetic field is nonzero while the current drift vanishes."""

"""Exception hierarchy shared by all hitgap modules."""


class HitgapError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(HitgapError):
    """Invalid user configuration (CLI flags, config file, simulation setup)."""


class DomainError(HitgapError):
    """Arguments outside the domain an operation is defined on."""


class NonIncreasingScale(HitgapError):
    """Tabulated scale values violate strict monotonicity."""


class QuadratureFailure(HitgapError):
    """A quadrature or cumulative integration did not meet its tolerance."""


class InfiniteMass(HitgapError):
    """Speed-measure tail integrals exceed the finite-mass bound."""


class CertificateRequired(HitgapError):
    """Operation needs a passing recurrence certificate and none holds."""


class ConvergenceFailure(HitgapError):
    """Eigenvalue residuals exceeded the configured tolerance."""


class DegenerateFunction(HitgapError):
    """Test function with zero Dirichlet energy passed to a variational check."""


class InsufficientTail(HitgapError):
    """Not enough uncensored samples beyond the fit window to estimate a tail rate."""


class WindowExceeded(HitgapError):
    """A search widened past the truncation window without meeting its target."""

    def __init__(self, message: str, achieved: float = float("nan")):
        super().__init__(message)
        self.achieved = achieved


class NotStabilizedWarning(UserWarning):
    """Ratio sequence of a moment-series estimate failed its stabilization tolerance."""

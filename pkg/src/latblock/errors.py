"""Exception types raised across the package."""


class LatblockError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(LatblockError):
    """Input vector dimension does not match the object's dimension."""


class EmptyWindow(LatblockError):
    """A region contains no lattice sites."""


class EmptySubsampleSet(LatblockError):
    """No subsample translate fits inside the region."""


class DegenerateSubsampling(LatblockError):
    """Fewer than two subsamples; the sample variance is undefined."""


class MissingSites(LatblockError):
    """The field sample does not cover every required site."""


class StatisticDomainError(LatblockError):
    """The statistic is undefined at an observed mean vector."""


class NonConvergent(LatblockError):
    """A truncated lattice sum failed to meet tolerance under the cap."""


class UnsupportedShape(LatblockError):
    """The operation is not available for this template shape."""


class UnsupportedD1Nonlinear(LatblockError):
    """One-dimensional bias constants for nonlinear statistics are not supported."""


class ZeroBiasConstant(LatblockError):
    """The leading bias constant vanishes, so the optimal-scaling balance degenerates."""


class InsufficientCandidates(LatblockError):
    """Too few candidate scales for empirical MSE minimization."""


class NotPositiveDefinite(LatblockError):
    """The covariance matrix on the window is not positive definite."""


class WindowTooLarge(LatblockError):
    """Window exceeds the dense-factorization site cap."""


class QuadratureBudgetExceeded(LatblockError):
    """Numeric quadrature is not offered at this dimension or size."""


class ConfigError(LatblockError):
    """A study configuration or CLI spec string failed validation."""


class NonIntegerScaleWarning(UserWarning):
    """Nonoverlapping scheme invoked with a non-integer subsample scale."""

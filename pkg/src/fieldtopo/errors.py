"""Exception types shared across the package."""


class FieldtopoError(Exception):
    pass


class DomainError(FieldtopoError, ValueError):
    """Input outside the mathematical domain of an operation."""


class UnsupportedOrderError(DomainError):
    """Bessel order above the configured maximum."""


class DegeneracyError(FieldtopoError):
    """A covariance structure is (near-)singular where it must not be."""


class ModelInconsistencyError(FieldtopoError):
    """Kernel derivatives violate a structural constraint (e.g. chi > sqrt(2))."""


class QuadratureError(FieldtopoError):
    """Adaptive quadrature failed to converge."""


class SamplerInefficiencyError(FieldtopoError):
    """Rejection sampler acceptance rate collapsed; carries diagnostics."""

    def __init__(self, message, proposals=0, accepts=0):
        super().__init__(message)
        self.proposals = proposals
        self.accepts = accepts


class ConfigError(FieldtopoError, ValueError):
    """Invalid experiment configuration."""


class ClassificationError(FieldtopoError):
    """Saddle connectivity classification could not be resolved."""

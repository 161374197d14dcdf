"""Exception types shared across the package."""


class BiasAuditError(Exception):
    """Base class for all package errors."""


class SchemaError(BiasAuditError):
    """The input file does not match the declared schema."""


class EmptyTableError(BiasAuditError):
    """Ingestion produced zero valid rows."""


class DegenerateColumnError(BiasAuditError):
    """A column is (numerically) constant and cannot be standardized."""


class SplitError(BiasAuditError):
    """A train/test split request cannot be satisfied."""


class FactorizationError(BiasAuditError):
    """A matrix that must be SPD failed its Cholesky factorization."""


class QuadratureError(BiasAuditError):
    """A quadrature oracle hit a non-finite integrand value."""


class DivergenceError(BiasAuditError):
    """A variational fit produced non-finite objectives for too many
    consecutive steps.  Carries the fit trace for post-mortem."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class EstimationError(BiasAuditError):
    """A Monte-Carlo estimate had too many non-finite samples."""

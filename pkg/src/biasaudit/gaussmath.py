"""Dense Gaussian linear algebra and low-dimensional quadrature.

All log densities are in nats.  Matrices here are small (at most a few
thousand rows), so everything is plain dense numpy.
"""

import numpy as np

from .errors import FactorizationError, QuadratureError

LOG_2PI = float(np.log(2.0 * np.pi))

# One-shot jitter added when a nominally-SPD matrix fails to factor;
# needed because marginal covariances of the form s*X@X.T + n*I can sit
# right at the edge of positive definiteness.
_JITTER_SCALE = 1e-8


class SpdMatrix:
    """Symmetric positive-definite matrix with a cached Cholesky factor.

    Construction validates symmetry and factors the matrix once.  If the
    factorization fails, a single jitter of ``1e-8 * mean(diag)`` is added
    to the diagonal and retried; a second failure raises
    :class:`FactorizationError`.
    """

    def __init__(self, values: np.ndarray):
        values = np.asarray(values, dtype=float)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {values.shape}")
        if not np.allclose(values, values.T, rtol=1e-10, atol=1e-10):
            raise FactorizationError("matrix is not symmetric within 1e-10")
        try:
            chol = np.linalg.cholesky(values)
        except np.linalg.LinAlgError:
            jitter = _JITTER_SCALE * float(np.mean(np.diag(values)))
            jittered = values + jitter * np.eye(values.shape[0])
            try:
                chol = np.linalg.cholesky(jittered)
            except np.linalg.LinAlgError as exc:
                raise FactorizationError(
                    f"Cholesky failed even after jitter {jitter:.3e}"
                ) from exc
            values = jittered
        self.values = values
        self.chol = chol
        self.values.flags.writeable = False
        self.chol.flags.writeable = False

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def log_det(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.chol))))

    def mahalanobis_sq(self, residuals: np.ndarray) -> np.ndarray:
        """r^T A^{-1} r for one residual vector or a batch of rows."""
        r = np.atleast_2d(np.asarray(residuals, dtype=float))
        # forward-substitution against the lower factor
        u = np.linalg.solve(self.chol, r.T)
        out = np.sum(u * u, axis=0)
        return out if np.asarray(residuals).ndim > 1 else float(out[0])


def chol_logdet(cov: SpdMatrix) -> float:
    """Log determinant via the cached Cholesky factor."""
    return cov.log_det()


def mvn_logpdf(x: np.ndarray, mean: np.ndarray, cov: SpdMatrix) -> float:
    """log N(x; mean, cov) in nats.

    ``x`` may also be an (n, d) batch of rows, in which case the summed
    log density of the independent rows is returned.
    """
    x = np.asarray(x, dtype=float)
    mean = np.asarray(mean, dtype=float)
    batched = x.ndim > 1
    d = cov.dim
    if x.shape[-1] != d or mean.shape[-1] != d:
        raise ValueError("dimension mismatch between x, mean and cov")
    quad = cov.mahalanobis_sq(x - mean)
    per_row = -0.5 * (d * LOG_2PI + cov.log_det() + quad)
    return float(np.sum(per_row)) if batched else float(per_row)


def normal_logpdf(x, sd: float):
    """Elementwise log N(x; 0, sd^2); broadcasts over arrays."""
    x = np.asarray(x, dtype=float)
    return -0.5 * (LOG_2PI + 2.0 * np.log(sd) + (x / sd) ** 2)


def grid_quadrature_2d(f, bounds, nodes_per_axis: int) -> float:
    """Tensor-product Gauss-Legendre estimate of a 2-D integral.

    ``f`` must accept two broadcastable arrays (meshgrid evaluation) and
    return the integrand values.  ``bounds`` is ``((x_lo, x_hi), (y_lo,
    y_hi))``.  Used as the brute-force evidence oracle for the latent
    models, so it refuses non-finite integrand values outright.
    """
    if nodes_per_axis < 32:
        raise ValueError("nodes_per_axis must be >= 32")
    (x_lo, x_hi), (y_lo, y_hi) = bounds
    nodes, weights = np.polynomial.legendre.leggauss(nodes_per_axis)
    x_nodes = 0.5 * (x_hi - x_lo) * nodes + 0.5 * (x_hi + x_lo)
    y_nodes = 0.5 * (y_hi - y_lo) * nodes + 0.5 * (y_hi + y_lo)
    x_w = 0.5 * (x_hi - x_lo) * weights
    y_w = 0.5 * (y_hi - y_lo) * weights
    xx, yy = np.meshgrid(x_nodes, y_nodes, indexing="ij")
    values = np.asarray(f(xx, yy), dtype=float)
    if values.shape != xx.shape:
        raise ValueError("integrand did not broadcast over the grid")
    if not np.all(np.isfinite(values)):
        raise QuadratureError("non-finite integrand value on quadrature grid")
    return float(x_w @ values @ y_w)

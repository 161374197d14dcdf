"""Causal and confounded generative models and their code lengths.

Two descriptions of the same data compete.  The *causal* model codes
the cause matrix under an independent Gaussian prior and the target
through a Bayesian linear regression on the causes.  The *confounded*
model codes causes and target jointly through a low-rank latent factor
model (probabilistic PCA with the factor loadings marginalized too).
Each model's description length is the negative log marginal
likelihood in nats; the variational engine estimates it as a negative
ELBO, which upper-bounds the true value.

Log joints here return analytic gradients; tests hold them to central
finite differences.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import advi
from .advi import FitConfig, FULL_RANK, MEAN_FIELD
from .errors import QuadratureError
from .gaussmath import SpdMatrix, grid_quadrature_2d, mvn_logpdf, normal_logpdf
from .seeding import derive_seed
from .tabular import DesignMatrix


@dataclass(frozen=True)
class CausalModelSpec:
    """Prior and noise scales of the cause-to-target regression model."""

    sigma_x: float = 1.0  # prior SD of each cause entry
    sigma_w: float = 1.0  # prior SD of regression weights
    sigma_y: float = 1.0  # observation noise SD of the target

    def __post_init__(self):
        if min(self.sigma_x, self.sigma_w, self.sigma_y) <= 0:
            raise ValueError("all model SDs must be positive")


@dataclass(frozen=True)
class ConfoundedModelSpec:
    """Latent dimension and scales of the joint factor model."""

    k: int = 1            # latent confounder dimension
    sigma_z: float = 1.0  # prior SD of confounder coordinates
    sigma_w: float = 1.0  # prior SD of loading entries
    sigma_obs: float = 1.0  # shared observation noise SD of all joint coordinates

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("latent dimension k must be >= 1")
        if min(self.sigma_z, self.sigma_w, self.sigma_obs) <= 0:
            raise ValueError("all model SDs must be positive")


class JointVector:
    """The n x (m+1) matrix stacking the causes and one target column."""

    def __init__(self, values: np.ndarray):
        values = np.asarray(values, dtype=float)
        if values.ndim != 2 or values.shape[1] < 2:
            raise ValueError("joint matrix must be n x (m+1) with m >= 1")
        if not np.all(np.isfinite(values)):
            raise ValueError("joint matrix must be finite")
        self.values = values

    @classmethod
    def from_design(cls, X: DesignMatrix, y: np.ndarray) -> "JointVector":
        y = np.asarray(y, dtype=float)
        if y.shape != (X.n,):
            raise ValueError("target length does not match design rows")
        return cls(np.column_stack([X.values, y]))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        # m + 1 joint coordinates
        return self.values.shape[1]


@dataclass(frozen=True)
class CodeLength:
    """A description length in nats plus the fit diagnostics behind it."""

    nats: float
    method: str
    family: str | None = None
    converged: bool = True
    elbo_se: float = 0.0
    iterations: int = 0


def _values(X) -> np.ndarray:
    return X.values if hasattr(X, "values") else np.asarray(X, dtype=float)


# ---------------------------------------------------------------------------
# causal model
# ---------------------------------------------------------------------------

def make_causal_target(X, y, spec: CausalModelSpec):
    """Batched log joint over the regression weights, with gradients.

    Returns ``(target, d)`` where ``target`` maps an (S, m) batch of
    weight vectors to per-sample log joints and gradients.
    """
    Xv = _values(X)
    y = np.asarray(y, dtype=float)
    n, m = Xv.shape
    if y.shape != (n,):
        raise ValueError("y length does not match design rows")
    var_w, var_y = spec.sigma_w ** 2, spec.sigma_y ** 2
    const = (-0.5 * m * math.log(2.0 * math.pi * var_w)
             - 0.5 * n * math.log(2.0 * math.pi * var_y))

    def target(weights: np.ndarray):
        weights = np.atleast_2d(weights)
        resid = y[None, :] - weights @ Xv.T
        values = (const
                  - 0.5 * np.sum(weights ** 2, axis=1) / var_w
                  - 0.5 * np.sum(resid ** 2, axis=1) / var_y)
        grads = -weights / var_w + (resid @ Xv) / var_y
        return values, grads

    return target, m


def causal_log_joint(w, X, y, spec: CausalModelSpec):
    """log P(w) + log P(y | X, w) and its gradient at a single point."""
    target, _ = make_causal_target(X, y, spec)
    values, grads = target(np.atleast_2d(w))
    return float(values[0]), grads[0]


def causal_evidence_closed_form(X, y, spec: CausalModelSpec) -> float:
    """log of the weight-marginalized target likelihood.

    The regression weights integrate out of the Gaussian model exactly,
    leaving a zero-mean Gaussian over the n observed targets whose
    covariance mixes the prior-propagated causes with observation
    noise.
    """
    Xv = _values(X)
    y = np.asarray(y, dtype=float)
    n = Xv.shape[0]
    if n < 1:
        raise ValueError("need at least one row")
    cov = SpdMatrix(spec.sigma_w ** 2 * (Xv @ Xv.T) + spec.sigma_y ** 2 * np.eye(n))
    return mvn_logpdf(y, np.zeros(n), cov)


def code_length_X(X, sigma_x: float) -> float:
    """Nats to code every cause entry under its independent prior."""
    Xv = _values(X)
    return float(-np.sum(normal_logpdf(Xv, sigma_x)))


def causal_code_length(X, y, spec: CausalModelSpec,
                       method: str = "advi",
                       family: str = FULL_RANK,
                       fit_config: FitConfig | None = None) -> CodeLength:
    """Description length of the data under the causal model.

    ``method="closed_form"`` uses the exact marginal; ``"advi"`` fits a
    Gaussian posterior over the weights and returns the negative ELBO
    estimate (an upper bound, equal in the limit for this conjugate
    model under the full-rank family).
    """
    Xv = _values(X)
    if Xv.shape[0] < 1:
        raise ValueError("need at least one row")
    prefix = code_length_X(Xv, spec.sigma_x)
    if method == "closed_form":
        return CodeLength(nats=prefix - causal_evidence_closed_form(Xv, y, spec),
                          method=method)
    if method != "advi":
        raise ValueError(f"unknown method {method!r}")
    config = fit_config or FitConfig()
    target, d = make_causal_target(Xv, y, spec)
    posterior, trace = advi.fit(target, d, config, family=family)
    elbo, se = advi.estimate_elbo(posterior, target, config.final_elbo_samples,
                                  derive_seed(config.seed, "final-elbo"))
    return CodeLength(nats=prefix - elbo, method=method, family=family,
                      converged=trace.converged, elbo_se=se,
                      iterations=trace.iterations_run)


# ---------------------------------------------------------------------------
# confounded model
# ---------------------------------------------------------------------------

def make_confounded_target(V: JointVector, spec: ConfoundedModelSpec):
    """Batched log joint over (confounders, loadings), with gradients.

    The flat parameter vector stacks the n x k confounder matrix first,
    then the k x (m+1) loading matrix.
    """
    data = V.values
    n, width = data.shape
    k = spec.k
    d = n * k + k * width
    var_z, var_w, var_obs = spec.sigma_z ** 2, spec.sigma_w ** 2, spec.sigma_obs ** 2
    const = (-0.5 * n * k * math.log(2.0 * math.pi * var_z)
             - 0.5 * k * width * math.log(2.0 * math.pi * var_w)
             - 0.5 * n * width * math.log(2.0 * math.pi * var_obs))

    def target(theta: np.ndarray):
        theta = np.atleast_2d(theta)
        s = theta.shape[0]
        Z = theta[:, :n * k].reshape(s, n, k)
        W = theta[:, n * k:].reshape(s, k, width)
        resid = data[None, :, :] - Z @ W
        values = (const
                  - 0.5 * np.sum(Z ** 2, axis=(1, 2)) / var_z
                  - 0.5 * np.sum(W ** 2, axis=(1, 2)) / var_w
                  - 0.5 * np.sum(resid ** 2, axis=(1, 2)) / var_obs)
        grad_z = -Z / var_z + (resid @ W.transpose(0, 2, 1)) / var_obs
        grad_w = -W / var_w + (Z.transpose(0, 2, 1) @ resid) / var_obs
        grads = np.concatenate(
            [grad_z.reshape(s, n * k), grad_w.reshape(s, k * width)], axis=1)
        return values, grads

    return target, d


def confounded_log_joint(latents: dict, V: JointVector, spec: ConfoundedModelSpec):
    """Joint log density at one (Z, W) point, with both gradients."""
    Z = np.asarray(latents["Z"], dtype=float)
    W = np.asarray(latents["W"], dtype=float)
    n, width = V.values.shape
    if Z.shape != (n, spec.k) or W.shape != (spec.k, width):
        raise ValueError("latent shapes do not match the joint matrix")
    target, _ = make_confounded_target(V, spec)
    theta = np.concatenate([Z.ravel(), W.ravel()])[None, :]
    values, grads = target(theta)
    flat = grads[0]
    return float(values[0]), {
        "grad_Z": flat[:n * spec.k].reshape(n, spec.k),
        "grad_W": flat[n * spec.k:].reshape(spec.k, width),
    }


def ppca_evidence_fixed_W(V: JointVector, W: np.ndarray,
                          spec: ConfoundedModelSpec) -> float:
    """Row-wise evidence with the confounders marginalized, loadings fixed.

    Each joint row is then a zero-mean Gaussian with covariance
    ``sigma_z^2 W^T W + sigma_obs^2 I``.
    """
    W = np.asarray(W, dtype=float)
    if not np.all(np.isfinite(W)):
        raise ValueError("loadings must be finite")
    width = V.width
    if W.shape != (spec.k, width):
        raise ValueError(f"expected loadings of shape ({spec.k}, {width})")
    cov = SpdMatrix(spec.sigma_z ** 2 * (W.T @ W) + spec.sigma_obs ** 2 * np.eye(width))
    return mvn_logpdf(V.values, np.zeros(width), cov)


def confounded_code_length(V: JointVector, spec: ConfoundedModelSpec,
                           method: str = "advi",
                           family: str = MEAN_FIELD,
                           fit_config: FitConfig | None = None) -> CodeLength:
    """Description length of the joint data under the confounded model.

    Estimated as the negative ELBO of a Gaussian fit over all latents
    (confounders and loadings together); there is no closed form.
    """
    if method != "advi":
        raise ValueError(f"unknown method {method!r} (only 'advi' is available)")
    m = V.width - 1
    if V.n < m + 2:
        raise ValueError(f"need at least m+2={m + 2} rows, have {V.n}")
    config = fit_config or FitConfig()
    target, d = make_confounded_target(V, spec)
    posterior, trace = advi.fit(target, d, config, family=family)
    elbo, se = advi.estimate_elbo(posterior, target, config.final_elbo_samples,
                                  derive_seed(config.seed, "final-elbo"))
    return CodeLength(nats=-elbo, method=method, family=family,
                      converged=trace.converged, elbo_se=se,
                      iterations=trace.iterations_run)


def confounded_evidence_quadrature(V: JointVector, spec: ConfoundedModelSpec,
                                   nodes_per_axis: int = 128) -> float:
    """Brute-force log evidence of the confounded model for m=1, k=1.

    Marginalizes the confounders in closed form per loading value, then
    integrates the two loading coordinates on a Gauss-Legendre grid.
    Exists purely as an independent check of the variational estimate.
    """
    if spec.k != 1 or V.width != 2:
        raise ValueError("quadrature oracle requires k=1 and m=1")
    half_width = 8.0 * spec.sigma_w

    def log_integrand(w1: float, w2: float) -> float:
        W = np.array([[w1, w2]])
        prior = float(np.sum(normal_logpdf(W, spec.sigma_w)))
        return ppca_evidence_fixed_W(V, W, spec) + prior

    # a coarse sweep locates the peak so the fine pass can renormalize
    coarse = np.linspace(-half_width, half_width, 33)
    shift = max(log_integrand(a, b) for a in coarse for b in coarse)
    if not np.isfinite(shift):
        raise QuadratureError("non-finite integrand during coarse sweep")

    vectorized = np.vectorize(lambda a, b: math.exp(log_integrand(a, b) - shift))
    integral = grid_quadrature_2d(
        vectorized,
        ((-half_width, half_width), (-half_width, half_width)),
        nodes_per_axis,
    )
    return shift + math.log(integral)

"""Dense numerical kernels: Cholesky factors, Gaussian and Student-t log
densities, and stable log-sum-exp.

All densities are evaluated in log space end to end; nothing here ever
exponentiates a density. Covariance-like matrices are always passed around
as their lower-triangular Cholesky factor so that log-determinants and
Mahalanobis forms come from triangular solves.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import gammaln

from .errors import (
    DimensionMismatch,
    EmptyInput,
    NonPositiveDof,
    NotPositiveDefinite,
)

LOG_2PI = float(np.log(2.0 * np.pi))

# Floor applied to the diagonal of a trainable Cholesky factor; keeps
# S = L L^T strictly positive definite after projection.
DIAG_FLOOR = 1e-6


def cholesky(a: np.ndarray) -> np.ndarray:
    """Lower-triangular L with L L^T = a for a symmetric PD matrix.

    Raises NotPositiveDefinite when a pivot is not strictly positive.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NotPositiveDefinite("matrix has non-finite entries")
    if not np.allclose(a, a.T, rtol=1e-8, atol=1e-10):
        raise DimensionMismatch("matrix is not symmetric")
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from exc


def project_lower(l: np.ndarray, diag_floor: float = DIAG_FLOOR) -> np.ndarray:
    """Zero the upper triangle and floor the diagonal of a factor matrix."""
    out = np.tril(np.asarray(l, dtype=np.float64)).copy()
    d = out.shape[0]
    idx = np.arange(d)
    out[idx, idx] = np.maximum(out[idx, idx], diag_floor)
    return out


def chol_logdet(chol: np.ndarray) -> float:
    """log |L| = sum of log diagonal entries of the factor."""
    return float(np.sum(np.log(np.diagonal(chol))))


def chol_solve_vec(chol: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve L z = b for z (forward substitution)."""
    return solve_triangular(chol, b, lower=True, check_finite=False)


def mvn_logpdf(x: np.ndarray, mu: np.ndarray, chol_sigma: np.ndarray) -> float:
    """log N(x | mu, Sigma) with Sigma given by its Cholesky factor."""
    x = np.asarray(x, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    d = x.shape[0]
    if mu.shape[0] != d or chol_sigma.shape != (d, d):
        raise DimensionMismatch(
            f"x has dim {d}, mu has dim {mu.shape[0]}, factor is {chol_sigma.shape}"
        )
    z = chol_solve_vec(chol_sigma, x - mu)
    return -0.5 * d * LOG_2PI - chol_logdet(chol_sigma) - 0.5 * float(z @ z)


def mvn_logpdf_batch(xs: np.ndarray, mu: np.ndarray, chol_sigma: np.ndarray) -> np.ndarray:
    """log N(x | mu, Sigma) for each row of xs; one triangular solve for all."""
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    if xs.shape[1] != mu.shape[0]:
        raise DimensionMismatch(f"rows have dim {xs.shape[1]}, mu has dim {mu.shape[0]}")
    z = solve_triangular(chol_sigma, (xs - mu).T, lower=True, check_finite=False)
    quad = np.sum(z * z, axis=0)
    return -0.5 * xs.shape[1] * LOG_2PI - chol_logdet(chol_sigma) - 0.5 * quad


def mvt_logpdf(
    x: np.ndarray, loc: np.ndarray, chol_scale: np.ndarray, dof: float
) -> float:
    """log density of the multivariate Student-t.

    Parametrized by location, the Cholesky factor of the scale matrix, and
    degrees of freedom:

        log Gamma((dof+d)/2) - log Gamma(dof/2) - (d/2) log(dof*pi)
        - log|L| - ((dof+d)/2) log(1 + q/dof)

    with q the squared Mahalanobis distance under the scale matrix.
    """
    if dof <= 0:
        raise NonPositiveDof(f"dof must be > 0, got {dof}")
    x = np.asarray(x, dtype=np.float64)
    loc = np.asarray(loc, dtype=np.float64)
    d = x.shape[0]
    if loc.shape[0] != d or chol_scale.shape != (d, d):
        raise DimensionMismatch(
            f"x has dim {d}, loc has dim {loc.shape[0]}, factor is {chol_scale.shape}"
        )
    z = chol_solve_vec(chol_scale, x - loc)
    q = float(z @ z)
    return (
        gammaln(0.5 * (dof + d))
        - gammaln(0.5 * dof)
        - 0.5 * d * np.log(dof * np.pi)
        - chol_logdet(chol_scale)
        - 0.5 * (dof + d) * np.log1p(q / dof)
    )


def mvt_logpdf_batch(
    xs: np.ndarray, loc: np.ndarray, chol_scale: np.ndarray, dof: float
) -> np.ndarray:
    """Student-t log density for each row of xs."""
    if dof <= 0:
        raise NonPositiveDof(f"dof must be > 0, got {dof}")
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    d = xs.shape[1]
    if loc.shape[0] != d:
        raise DimensionMismatch(f"rows have dim {d}, loc has dim {loc.shape[0]}")
    z = solve_triangular(chol_scale, (xs - loc).T, lower=True, check_finite=False)
    q = np.sum(z * z, axis=0)
    return (
        gammaln(0.5 * (dof + d))
        - gammaln(0.5 * dof)
        - 0.5 * d * np.log(dof * np.pi)
        - chol_logdet(chol_scale)
        - 0.5 * (dof + d) * np.log1p(q / dof)
    )


def log_sum_exp(values) -> float:
    """log sum_i exp(v_i) via max subtraction; safe for large magnitudes."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise EmptyInput("log_sum_exp of an empty sequence")
    m = np.max(v)
    if not np.isfinite(m):
        # all -inf (log of zero mass) or a +inf/nan dominates; return it as is
        return float(m)
    return float(m + np.log(np.sum(np.exp(v - m))))


def log_softmax(values: np.ndarray) -> np.ndarray:
    """Normalize log scores to log probabilities."""
    v = np.asarray(values, dtype=np.float64)
    return v - log_sum_exp(v)

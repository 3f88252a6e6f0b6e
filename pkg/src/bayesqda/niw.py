"""Normal-Inverse-Wishart prior, conjugate posterior update, and point
estimates.

The prior over a class Gaussian (mu, Sigma) is NIW(m, kappa, S, nu) with
S kept as its Cholesky factor L (S = L L^T). Conditioning on K samples
gives another NIW with

    m_j  = (kappa m + K mean) / (kappa + K)
    kappa_j = kappa + K,   nu_j = nu + K
    S_j  = S + scatter about the sample mean
             + kappa K / (kappa + K) (mean - m)(mean - m)^T

and the posterior mode yields the point estimate mu_j = m_j,
Sigma_j = S_j / (nu_j + d + 1).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics
from .errors import DimensionMismatch, EmptySupport, NotPositiveDefinite


@dataclass(frozen=True)
class NiwPrior:
    """Trainable prior: mean m, pseudo-count kappa, Cholesky factor L of the
    scale matrix, and degrees of freedom nu."""

    m: np.ndarray
    kappa: float
    chol_s: np.ndarray  # lower triangular, diagonal >= numerics.DIAG_FLOOR
    nu: float

    def __post_init__(self):
        object.__setattr__(self, "m", np.asarray(self.m, dtype=np.float64))
        object.__setattr__(self, "chol_s", np.asarray(self.chol_s, dtype=np.float64))
        d = self.d
        if self.chol_s.shape != (d, d):
            raise DimensionMismatch(
                f"factor shape {self.chol_s.shape} does not match mean dim {d}"
            )
        if not (self.kappa > 0):
            raise ValueError(f"kappa must be > 0, got {self.kappa}")
        if not (self.nu > d - 1):
            raise ValueError(f"nu must be > d-1 = {d - 1}, got {self.nu}")
        if np.any(np.triu(self.chol_s, k=1) != 0.0):
            raise ValueError("scale factor has nonzero entries above the diagonal")
        if np.any(np.diagonal(self.chol_s) < numerics.DIAG_FLOOR):
            raise ValueError(
                f"scale factor diagonal must be >= {numerics.DIAG_FLOOR}"
            )
        if not (
            np.all(np.isfinite(self.m))
            and np.all(np.isfinite(self.chol_s))
            and np.isfinite(self.kappa)
            and np.isfinite(self.nu)
        ):
            raise ValueError("prior parameters must be finite")

    @property
    def d(self) -> int:
        return self.m.shape[0]

    def scale_matrix(self) -> np.ndarray:
        """Dense S = L L^T."""
        return self.chol_s @ self.chol_s.T


def default_prior(d: int) -> NiwPrior:
    """Untrained starting prior: m = 0, kappa = 1, S = I, nu = d."""
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    return NiwPrior(m=np.zeros(d), kappa=1.0, chol_s=np.eye(d), nu=float(d))


@dataclass(frozen=True)
class ClassPosterior:
    """NIW posterior for one class after conditioning on k support samples."""

    m_j: np.ndarray
    kappa_j: float
    s_j: np.ndarray
    nu_j: float
    chol_s_j: np.ndarray = field(repr=False)
    k: int = 0

    @property
    def d(self) -> int:
        return self.m_j.shape[0]


@dataclass(frozen=True)
class GaussianParams:
    """Point-estimate Gaussian (posterior mode) for one class."""

    mu: np.ndarray
    sigma: np.ndarray
    chol_sigma: np.ndarray = field(repr=False)


def _as_sample_matrix(samples, d: int) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise DimensionMismatch(f"samples must be a K x d array, got shape {x.shape}")
    if x.shape[0] == 0:
        raise EmptySupport("no support samples for class")
    if x.shape[1] != d:
        raise DimensionMismatch(f"samples have dim {x.shape[1]}, prior has dim {d}")
    return x


def niw_posterior(prior: NiwPrior, samples) -> ClassPosterior:
    """Conjugate update of the prior on K >= 1 samples from one class."""
    x = _as_sample_matrix(samples, prior.d)
    k = x.shape[0]
    mean = x.mean(axis=0)
    centered = x - mean
    scatter = centered.T @ centered
    kappa_j = prior.kappa + k
    nu_j = prior.nu + k
    m_j = (prior.kappa * prior.m + k * mean) / kappa_j
    diff = mean - prior.m
    s_j = prior.scale_matrix() + scatter + (prior.kappa * k / kappa_j) * np.outer(diff, diff)
    s_j = 0.5 * (s_j + s_j.T)  # keep exactly symmetric against rounding
    return ClassPosterior(
        m_j=m_j,
        kappa_j=kappa_j,
        s_j=s_j,
        nu_j=nu_j,
        chol_s_j=numerics.cholesky(s_j),
        k=k,
    )


def map_estimate(post: ClassPosterior) -> GaussianParams:
    """Posterior-mode Gaussian: mu = m_j, Sigma = S_j / (nu_j + d + 1).

    The factor of Sigma is the cached factor of S_j rescaled, so no second
    factorization is needed.
    """
    c = post.nu_j + post.d + 1.0
    sigma = post.s_j / c
    chol = post.chol_s_j / np.sqrt(c)
    return GaussianParams(mu=post.m_j, sigma=sigma, chol_sigma=chol)


def mle_qda(class_samples, ridge: float | None = None) -> list[GaussianParams]:
    """Per-class sample mean and covariance, the no-prior baseline.

    Covariance is the population estimate (scatter / K) plus ridge * I.
    ridge=None uses 1e-6 * trace(cov) / d per class; ridge=0 is literal and
    raises NotPositiveDefinite on singular covariances.
    """
    if ridge is not None and ridge < 0:
        raise ValueError(f"ridge must be >= 0, got {ridge}")
    out = []
    for samples in class_samples:
        x = np.asarray(samples, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] == 0:
            raise EmptySupport("each class needs at least one sample")
        d = x.shape[1]
        mu = x.mean(axis=0)
        centered = x - mu
        cov = centered.T @ centered / x.shape[0]
        eps = 1e-6 * float(np.trace(cov)) / d if ridge is None else ridge
        cov = cov + eps * np.eye(d)
        try:
            chol = numerics.cholesky(cov)
        except NotPositiveDefinite as exc:
            raise NotPositiveDefinite(
                f"singular class covariance (K={x.shape[0]}, d={d}); "
                "increase ridge"
            ) from exc
        out.append(GaussianParams(mu=mu, sigma=cov, chol_sigma=chol))
    return out

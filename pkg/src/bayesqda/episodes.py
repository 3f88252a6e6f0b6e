"""Labeled feature datasets, few-shot episode sampling, and a synthetic
generator whose ground-truth prior is known.

Episodes are C-way K-shot: C classes drawn uniformly without replacement,
then K support and Q query rows per class, disjoint within the class.
Samplers take an explicit numpy Generator so concurrent sampling stays
reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatch,
    InsufficientClasses,
    InsufficientSamplesPerClass,
    LabelOutOfRange,
)


@dataclass(frozen=True)
class FeatureDataset:
    """n x d feature matrix with integer class labels."""

    features: np.ndarray
    labels: np.ndarray
    name: str = ""
    class_index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if features.ndim != 2:
            raise DimensionMismatch(f"features must be 2-d, got shape {features.shape}")
        if labels.shape != (features.shape[0],):
            raise DimensionMismatch(
                f"{features.shape[0]} rows but {labels.shape[0]} labels"
            )
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        if not self.class_index:
            index = {}
            for c in np.unique(labels):
                index[int(c)] = np.flatnonzero(labels == c)
            object.__setattr__(self, "class_index", index)
        for c, rows in self.class_index.items():
            if len(rows) == 0:
                raise LabelOutOfRange(f"class {c} has no samples")

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def n_classes(self) -> int:
        return len(self.class_index)


@dataclass(frozen=True)
class Episode:
    """One few-shot task: per-class support arrays plus a flat query set
    with labels remapped to 0..C-1 (order of the sampled classes)."""

    support: tuple  # C arrays of shape (K, d)
    query_x: np.ndarray  # (C*Q, d)
    query_y: np.ndarray  # (C*Q,) in 0..C-1
    class_ids: tuple  # the original dataset classes, len C

    @property
    def n_way(self) -> int:
        return len(self.support)

    @property
    def d(self) -> int:
        return self.query_x.shape[1]


def sample_episode(
    dataset: FeatureDataset, c: int, k: int, q: int, rng: np.random.Generator
) -> Episode:
    """Draw a C-way K-shot episode with Q queries per class."""
    if dataset.n_classes < c:
        raise InsufficientClasses(
            f"need {c} classes, dataset has {dataset.n_classes}"
        )
    class_ids = sorted(dataset.class_index)
    chosen = rng.choice(len(class_ids), size=c, replace=False)
    support = []
    query_x = []
    query_y = []
    picked = []
    for new_label, idx in enumerate(chosen):
        cid = class_ids[idx]
        rows = dataset.class_index[cid]
        if len(rows) < k + q:
            raise InsufficientSamplesPerClass(
                f"class {cid} has {len(rows)} samples, need {k + q}"
            )
        perm = rng.permutation(len(rows))[: k + q]
        rows = rows[perm]
        support.append(dataset.features[rows[:k]])
        query_x.append(dataset.features[rows[k:]])
        query_y.append(np.full(q, new_label, dtype=np.int64))
        picked.append(cid)
    return Episode(
        support=tuple(support),
        query_x=np.vstack(query_x),
        query_y=np.concatenate(query_y),
        class_ids=tuple(picked),
    )


def normalize_cl2n(dataset: FeatureDataset, mean: np.ndarray) -> FeatureDataset:
    """Center every row by the supplied mean, then L2-normalize.

    The mean should come from the training split. Rows equal to the mean
    stay at zero rather than dividing by zero.
    """
    mean = np.asarray(mean, dtype=np.float64)
    if mean.shape != (dataset.d,):
        raise DimensionMismatch(f"mean has shape {mean.shape}, features have dim {dataset.d}")
    centered = dataset.features - mean
    norms = np.linalg.norm(centered, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return FeatureDataset(
        features=centered / norms,
        labels=dataset.labels,
        name=dataset.name + "+cl2n" if dataset.name else "cl2n",
    )


@dataclass(frozen=True)
class SyntheticTaskSpec:
    """Ground-truth NIW hyperparameters for the synthetic benchmark.

    Class parameters are drawn (mu, Sigma) ~ NIW(m, kappa, S, nu) and
    samples ~ N(mu, Sigma) with optional isotropic observation noise, so
    the generative process matches the model family exactly.
    """

    d: int
    m: np.ndarray
    kappa: float
    s: np.ndarray
    nu: float
    noise_scale: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "m", np.asarray(self.m, dtype=np.float64))
        object.__setattr__(self, "s", np.asarray(self.s, dtype=np.float64))
        if self.m.shape != (self.d,) or self.s.shape != (self.d, self.d):
            raise DimensionMismatch("spec shapes do not match d")
        if not (self.kappa > 0 and self.nu > self.d - 1 and self.noise_scale >= 0):
            raise ValueError("invalid synthetic spec hyperparameters")


def sample_invwishart(
    chol_s: np.ndarray, nu: float, rng: np.random.Generator
) -> np.ndarray:
    """One draw Sigma ~ InverseWishart(nu, S) via the Bartlett factor.

    A is lower triangular with chi-distributed diagonal and standard normal
    subdiagonal; W = (L_inv_factor A)(...)^T is Wishart(nu, S^-1), and the
    draw is W^-1 = Y Y^T with Y = L A^-T.
    """
    from scipy.linalg import solve_triangular

    d = chol_s.shape[0]
    a = np.zeros((d, d))
    for i in range(d):
        a[i, i] = np.sqrt(rng.chisquare(nu - i))
    if d > 1:
        tril = np.tril_indices(d, k=-1)
        a[tril] = rng.standard_normal(len(tril[0]))
    # Y = chol_s @ A^-T: solve A Y^T = chol_s^T
    y = solve_triangular(a, chol_s.T, lower=True, check_finite=False).T
    return y @ y.T


def sample_niw(
    m: np.ndarray, kappa: float, chol_s: np.ndarray, nu: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """One draw (mu, Sigma) from the NIW: Sigma inverse-Wishart, then
    mu | Sigma ~ N(m, Sigma / kappa)."""
    sigma = sample_invwishart(chol_s, nu, rng)
    chol_sigma = np.linalg.cholesky(sigma)
    mu = m + (chol_sigma @ rng.standard_normal(m.shape[0])) / np.sqrt(kappa)
    return mu, sigma


def generate_synthetic(
    spec: SyntheticTaskSpec,
    classes: int,
    samples_per_class: int,
    rng: np.random.Generator,
    name: str = "synthetic",
) -> FeatureDataset:
    """Dataset of `classes` Gaussian classes drawn from the spec's NIW."""
    chol_s = np.linalg.cholesky(spec.s)
    features = []
    labels = []
    for c in range(classes):
        mu, sigma = sample_niw(spec.m, spec.kappa, chol_s, spec.nu, rng)
        chol_sigma = np.linalg.cholesky(sigma)
        z = rng.standard_normal((samples_per_class, spec.d))
        x = mu + z @ chol_sigma.T
        if spec.noise_scale > 0:
            x = x + spec.noise_scale * rng.standard_normal(x.shape)
        features.append(x)
        labels.append(np.full(samples_per_class, c, dtype=np.int64))
    return FeatureDataset(
        features=np.vstack(features), labels=np.concatenate(labels), name=name
    )

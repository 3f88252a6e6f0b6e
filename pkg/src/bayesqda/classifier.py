"""Class-conditional Gaussian classifiers built from an NIW prior.

Three prediction modes over a shared per-class posterior structure:

  map  -- each class scored by the Gaussian at its posterior mode
  fb   -- parameters marginalized out, each class scored by the Student-t
          predictive with location m_j, scale (kappa_j+1)/(kappa_j rho) S_j
          and dof rho = nu_j - d + 1
  lda  -- tied-covariance variant: per-class means from the conjugate
          update, one shared scale from pooled within-class deviations

Class probabilities are the temperature-scaled normalization of the
per-class log densities (uniform class prior).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import numerics
from .errors import DimensionMismatch, DuplicateClass, EmptySupport
from .niw import ClassPosterior, NiwPrior, map_estimate, niw_posterior

MODE_MAP = "map"
MODE_FB = "fb"
MODE_LDA = "lda"
MODES = (MODE_MAP, MODE_FB, MODE_LDA)


@dataclass(frozen=True)
class QdaModel:
    """Immutable set of per-class posteriors plus the prediction rule."""

    classes: tuple[tuple[object, ClassPosterior], ...]
    mode: str
    d: int
    temperature: float = 1.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}, expected one of {MODES}")
        if not (self.temperature > 0):
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        ids = [cid for cid, _ in self.classes]
        if len(set(ids)) != len(ids):
            raise DuplicateClass(f"duplicate class ids in {ids}")

    @property
    def class_ids(self) -> list:
        return [cid for cid, _ in self.classes]

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def with_temperature(self, temperature: float) -> "QdaModel":
        return replace(self, temperature=temperature)


@dataclass(frozen=True)
class Prediction:
    """Normalized class probabilities and the raw per-class log densities."""

    probs: np.ndarray
    log_scores: np.ndarray


def _normalize_support(support) -> list[tuple[object, np.ndarray]]:
    if isinstance(support, dict):
        items = list(support.items())
    else:
        items = list(enumerate(support))
    if not items:
        raise EmptySupport("support set has no classes")
    return [(cid, np.asarray(x, dtype=np.float64)) for cid, x in items]


def fit(prior: NiwPrior, support, mode: str = MODE_MAP, temperature: float = 1.0) -> QdaModel:
    """Build a model from per-class support samples.

    support is either a dict {class_id: (K, d) array} or a sequence whose
    index is the class id. Per-class shot counts may differ.
    """
    items = _normalize_support(support)
    if mode == MODE_LDA:
        classes = _fit_tied(prior, items)
    else:
        classes = tuple((cid, niw_posterior(prior, x)) for cid, x in items)
    return QdaModel(classes=classes, mode=mode, d=prior.d, temperature=temperature)


def _fit_tied(prior: NiwPrior, items) -> tuple:
    """Tied-covariance fit: class means from per-class conjugate updates, a
    single shared scale from one update on all support points centered by
    their own class means (kappa, nu advanced by the total count)."""
    centered = []
    per_class = []
    for cid, x in items:
        post = niw_posterior(prior, x)
        per_class.append((cid, post, x.shape[0]))
        centered.append(x - x.mean(axis=0))
    pooled = niw_posterior(prior, np.vstack(centered))
    classes = []
    for cid, post, k in per_class:
        classes.append(
            (
                cid,
                ClassPosterior(
                    m_j=post.m_j,
                    kappa_j=pooled.kappa_j,
                    s_j=pooled.s_j,
                    nu_j=pooled.nu_j,
                    chol_s_j=pooled.chol_s_j,
                    k=k,
                ),
            )
        )
    return tuple(classes)


def add_class(model: QdaModel, prior: NiwPrior, class_id, samples) -> QdaModel:
    """Extend a model with one more class; existing posteriors are shared
    untouched, which is what makes incremental growth exact."""
    if model.mode == MODE_LDA:
        raise ValueError("tied-covariance models cannot be grown incrementally")
    if class_id in model.class_ids:
        raise DuplicateClass(f"class {class_id!r} already present")
    post = niw_posterior(prior, samples)
    if post.d != model.d:
        raise DimensionMismatch(f"new class has dim {post.d}, model has dim {model.d}")
    return replace(model, classes=model.classes + ((class_id, post),))


def log_scores_batch(model: QdaModel, xs: np.ndarray) -> np.ndarray:
    """Raw per-class log densities for each query row; shape (n, C)."""
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    if xs.shape[1] != model.d:
        raise DimensionMismatch(f"queries have dim {xs.shape[1]}, model has dim {model.d}")
    cols = []
    for _, post in model.classes:
        if model.mode == MODE_FB:
            rho = post.nu_j - post.d + 1.0
            scale_factor = np.sqrt((post.kappa_j + 1.0) / (post.kappa_j * rho))
            cols.append(
                numerics.mvt_logpdf_batch(xs, post.m_j, scale_factor * post.chol_s_j, rho)
            )
        else:
            params = map_estimate(post)
            cols.append(numerics.mvn_logpdf_batch(xs, params.mu, params.chol_sigma))
    return np.stack(cols, axis=1)


def _to_prediction(log_scores: np.ndarray, temperature: float) -> Prediction:
    log_probs = numerics.log_softmax(log_scores / temperature)
    return Prediction(probs=np.exp(log_probs), log_scores=log_scores)


def predict(model: QdaModel, x: np.ndarray) -> Prediction:
    """Score a single query under the model's own mode."""
    scores = log_scores_batch(model, x)[0]
    return _to_prediction(scores, model.temperature)


def predict_map(model: QdaModel, x: np.ndarray) -> Prediction:
    if model.mode not in (MODE_MAP, MODE_LDA):
        raise ValueError(f"predict_map needs a map or lda model, got {model.mode!r}")
    return predict(model, x)


def predict_fb(model: QdaModel, x: np.ndarray) -> Prediction:
    if model.mode != MODE_FB:
        raise ValueError(f"predict_fb needs an fb model, got {model.mode!r}")
    return predict(model, x)


def predict_batch(model: QdaModel, xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(probs, log_scores) for a batch of queries; shapes (n, C)."""
    scores = log_scores_batch(model, xs)
    shifted = scores / model.temperature
    shifted = shifted - shifted.max(axis=1, keepdims=True)
    probs = np.exp(shifted)
    probs /= probs.sum(axis=1, keepdims=True)
    return probs, scores

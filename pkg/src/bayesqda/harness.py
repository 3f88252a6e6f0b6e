"""Evaluation protocols: standard episodic accuracy, the ridge-MLE
baseline, and class-incremental sessions.

Episode e of a run is always drawn from a generator seeded with
(seed, e), so results are identical across runs and across worker counts;
workers only change the schedule, never the sample stream or the
reduction order.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .classifier import MODE_FB, add_class, fit, log_scores_batch, predict_batch
from .episodes import Episode, FeatureDataset, sample_episode
from .niw import NiwPrior, mle_qda
from .numerics import mvn_logpdf_batch


@dataclass(frozen=True)
class EvalResult:
    """Mean episode accuracy in percent with its 95% confidence interval
    (1.96 * population std / sqrt(episodes))."""

    mean: float
    ci95: float
    episodes: int
    per_episode: np.ndarray

    def __str__(self) -> str:
        return f"acc {self.mean:.2f} ± {self.ci95:.2f}"


@dataclass(frozen=True)
class ProtocolRun:
    """Per-episode accuracies plus pooled (confidence, correct) records."""

    accuracies: np.ndarray
    confidences: np.ndarray
    corrects: np.ndarray

    def result(self) -> EvalResult:
        accs = self.accuracies
        e = accs.size
        return EvalResult(
            mean=100.0 * float(accs.mean()),
            ci95=100.0 * 1.96 * float(accs.std()) / np.sqrt(e),
            episodes=e,
            per_episode=accs,
        )


def prior_scorer(prior: NiwPrior, mode: str):
    """Episode scorer for a prior-backed model."""

    def score(episode: Episode) -> np.ndarray:
        model = fit(prior, episode.support, mode=mode)
        return log_scores_batch(model, episode.query_x)

    return score


def mle_scorer(ridge: float | None = None):
    """Episode scorer for the no-prior maximum-likelihood baseline."""

    def score(episode: Episode) -> np.ndarray:
        params = mle_qda(episode.support, ridge=ridge)
        return np.stack(
            [mvn_logpdf_batch(episode.query_x, p.mu, p.chol_sigma) for p in params],
            axis=1,
        )

    return score


def run_protocol(
    dataset: FeatureDataset,
    c: int,
    k: int,
    q: int,
    episodes: int,
    score_fn,
    seed: int = 0,
    temperature: float = 1.0,
    workers: int = 1,
) -> ProtocolRun:
    """Run `episodes` seeded episodes through a scorer and pool results."""
    seed = seed & 0xFFFFFFFFFFFFFFFF

    def one(e: int):
        rng = np.random.default_rng([seed, e])
        episode = sample_episode(dataset, c, k, q, rng)
        scores = score_fn(episode)
        pred = np.argmax(scores, axis=1)
        correct = pred == episode.query_y
        shifted = (scores - scores.max(axis=1, keepdims=True)) / temperature
        conf = 1.0 / np.sum(np.exp(shifted), axis=1)
        return float(correct.mean()), conf, correct

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(episodes)))
    else:
        results = [one(e) for e in range(episodes)]
    return ProtocolRun(
        accuracies=np.array([r[0] for r in results]),
        confidences=np.concatenate([r[1] for r in results]),
        corrects=np.concatenate([r[2] for r in results]),
    )


def evaluate(
    prior: NiwPrior,
    dataset: FeatureDataset,
    c: int,
    k: int,
    q: int = 15,
    episodes: int = 600,
    mode: str = MODE_FB,
    temperature: float = 1.0,
    seed: int = 0,
    workers: int = 1,
) -> EvalResult:
    """Standard protocol: mean accuracy over E sampled episodes."""
    run = run_protocol(
        dataset, c, k, q, episodes, prior_scorer(prior, mode),
        seed=seed, temperature=temperature, workers=workers,
    )
    return run.result()


@dataclass(frozen=True)
class SessionResult:
    session: int
    ways: int
    accuracy: float


def evaluate_incremental(
    prior: NiwPrior,
    base_support: dict,
    session_supports: list[dict],
    test_sets: dict,
    mode: str = MODE_FB,
) -> list[SessionResult]:
    """Class-incremental protocol: start from the base classes, add each
    session's classes via the conjugate update only, and after each session
    evaluate on the test samples of every class seen so far."""
    model = fit(prior, base_support, mode=mode)
    results = []
    for s, increment in enumerate([{}] + list(session_supports)):
        for class_id, samples in increment.items():
            model = add_class(model, prior, class_id, samples)
        seen = model.class_ids
        xs = np.vstack([test_sets[cid] for cid in seen])
        ys = np.concatenate(
            [np.full(len(test_sets[cid]), i) for i, cid in enumerate(seen)]
        )
        probs, _ = predict_batch(model, xs)
        acc = float(np.mean(np.argmax(probs, axis=1) == ys))
        results.append(SessionResult(session=s, ways=len(seen), accuracy=acc))
    return results

"""Expected calibration error and temperature fitting.

ECE bins predictions by their confidence (max class probability) into B
equal-width bins on [0, 1] and sums n_b/N |acc(b) - conf(b)|. Temperature
is fitted by grid search because ECE is piecewise constant in T; the grid
is log-spaced on [0.05, 20] with the identity temperature pinned as its
midpoint so that a fitted temperature can never be worse than none on the
fitting set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .classifier import fit, log_scores_batch
from .errors import EmptyInput
from .niw import NiwPrior

DEFAULT_BINS = 20


@dataclass(frozen=True)
class CalibrationRecord:
    confidence: float
    correct: bool


@dataclass(frozen=True)
class BinStat:
    count: int
    mean_confidence: float
    accuracy: float


@dataclass(frozen=True)
class CalibrationReport:
    bins: tuple[BinStat, ...]
    ece: float
    n: int
    temperature_used: float = 1.0


def _as_arrays(records) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(records, tuple) and len(records) == 2:
        conf, correct = records
        return np.asarray(conf, dtype=np.float64), np.asarray(correct, dtype=bool)
    conf = np.array([r.confidence for r in records], dtype=np.float64)
    correct = np.array([r.correct for r in records], dtype=bool)
    return conf, correct


def bin_of(confidence: float, b: int) -> int:
    """Bins are [k/B, (k+1)/B) with the top edge closed."""
    return min(int(confidence * b), b - 1)


def ece(records, b: int = DEFAULT_BINS, temperature_used: float = 1.0) -> CalibrationReport:
    """Binned calibration error over (confidence, correct) records."""
    conf, correct = _as_arrays(records)
    if conf.size == 0:
        raise EmptyInput("no calibration records")
    if b < 1:
        raise ValueError(f"bin count must be >= 1, got {b}")
    idx = np.minimum((conf * b).astype(np.int64), b - 1)
    n = conf.size
    bins = []
    total = 0.0
    for k in range(b):
        mask = idx == k
        n_b = int(np.sum(mask))
        if n_b == 0:
            bins.append(BinStat(count=0, mean_confidence=0.0, accuracy=0.0))
            continue
        mean_conf = float(np.mean(conf[mask]))
        acc = float(np.mean(correct[mask]))
        total += (n_b / n) * abs(acc - mean_conf)
        bins.append(BinStat(count=n_b, mean_confidence=mean_conf, accuracy=acc))
    return CalibrationReport(
        bins=tuple(bins), ece=total, n=n, temperature_used=temperature_used
    )


def temperature_grid(n: int = 101) -> np.ndarray:
    """Log-spaced candidate temperatures on [0.05, 20].

    The bounds are symmetric about 1, and the midpoint is pinned to exactly
    1.0 so the identity temperature is always a candidate.
    """
    grid = np.logspace(np.log10(0.05), np.log10(20.0), n)
    grid[n // 2] = 1.0
    return grid


def confidences_at(log_scores: np.ndarray, temperature: float) -> np.ndarray:
    """Max class probability per row after temperature scaling."""
    shifted = (log_scores - log_scores.max(axis=1, keepdims=True)) / temperature
    return 1.0 / np.sum(np.exp(shifted), axis=1)


def fit_temperature(
    prior: NiwPrior, episodes, mode: str, b: int = DEFAULT_BINS
) -> float:
    """Grid-search the temperature minimizing ECE pooled over the episodes.

    Ties are broken toward T = 1. Correctness of each prediction is
    temperature-invariant, so scores are computed once per episode.
    """
    episodes = list(episodes)
    if not episodes:
        raise EmptyInput("temperature fitting needs at least one episode")
    all_scores = []
    all_correct = []
    for ep in episodes:
        model = fit(prior, ep.support, mode=mode)
        scores = log_scores_batch(model, ep.query_x)
        all_scores.append(scores)
        all_correct.append(np.argmax(scores, axis=1) == ep.query_y)
    correct = np.concatenate(all_correct)

    grid = temperature_grid()
    eces = np.empty(grid.size)
    for i, t in enumerate(grid):
        conf = np.concatenate([confidences_at(s, t) for s in all_scores])
        eces[i] = ece((conf, correct), b).ece
    best = eces.min()
    ties = np.flatnonzero(eces == best)
    winner = ties[np.argmin(np.abs(np.log(grid[ties])))]
    return float(grid[winner])


def report_table(report: CalibrationReport) -> str:
    """Line-delimited table (bin, count, confidence, accuracy) for plotting."""
    lines = ["# bin\tcount\tconfidence\taccuracy"]
    for k, stat in enumerate(report.bins):
        lines.append(
            f"{k}\t{stat.count}\t{stat.mean_confidence:.6f}\t{stat.accuracy:.6f}"
        )
    lines.append(f"# ece\t{report.ece:.6f}\tn\t{report.n}")
    return "\n".join(lines) + "\n"

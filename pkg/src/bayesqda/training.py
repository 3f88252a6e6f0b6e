"""Episodic meta-learning of the NIW prior.

Each iteration samples an episode, builds the per-class posteriors from the
support set, scores the query set, and steps the prior parameters
(m, L, kappa, nu) down the exact analytic gradient of the episode loss.
The gradient is hand-derived through the conjugate update and through the
Gaussian (map mode) or Student-t (fb mode) query densities, and is checked
against central finite differences in the test suite.

Constraints are enforced by projection after every step: kappa and nu are
clipped back to their minimum allowable values and the scale factor L has
its upper triangle zeroed and its diagonal floored.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import digamma

from . import numerics
from .classifier import MODE_FB, MODE_MAP, fit, log_scores_batch
from .episodes import Episode, FeatureDataset, sample_episode
from .errors import (
    InsufficientClasses,
    InsufficientSamplesPerClass,
    LabelOutOfRange,
)
from .niw import NiwPrior, default_prior

GENERATIVE = "generative"
DISCRIMINATIVE = "discriminative"
LOSS_KINDS = (GENERATIVE, DISCRIMINATIVE)

OPT_SGD = "sgd"
OPT_MOMENTUM = "momentum"
OPT_ADAM = "adam"
OPTIMIZERS = (OPT_SGD, OPT_MOMENTUM, OPT_ADAM)


@dataclass(frozen=True)
class TrainerConfig:
    iterations: int = 10000
    learning_rate: float = 3e-4
    optimizer: str = OPT_ADAM
    batch_episodes: int = 1
    loss_kind: str = GENERATIVE
    mode: str = MODE_FB
    ways: int = 5
    shots: int = 1
    queries: int = 15
    seed: int = 0
    eps_kappa: float = 1e-3
    eps_nu: float = 1e-3
    eps_diag: float = numerics.DIAG_FLOOR
    momentum: float = 0.9
    schedule: str = "constant"  # constant | cosine
    freeze_mean: bool = False

    def __post_init__(self):
        if self.iterations < 0 or self.batch_episodes < 1:
            raise ValueError("iterations must be >= 0 and batch_episodes >= 1")
        if min(self.ways, self.shots, self.queries) < 1:
            raise ValueError("ways, shots and queries must all be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if min(self.eps_kappa, self.eps_nu, self.eps_diag) <= 0:
            raise ValueError("projection epsilons must be > 0")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.loss_kind!r}")
        if self.mode not in (MODE_MAP, MODE_FB):
            raise ValueError(f"training mode must be map or fb, got {self.mode!r}")
        if self.schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown schedule {self.schedule!r}")


@dataclass(frozen=True)
class PriorGradient:
    """Gradient of an episode loss with respect to (m, L, kappa, nu)."""

    g_m: np.ndarray
    g_chol_s: np.ndarray  # same shape as L, upper triangle zero
    g_kappa: float
    g_nu: float

    def norm(self) -> float:
        return math.sqrt(
            float(self.g_m @ self.g_m)
            + float(np.sum(self.g_chol_s**2))
            + self.g_kappa**2
            + self.g_nu**2
        )

    def scaled(self, c: float) -> "PriorGradient":
        return PriorGradient(
            g_m=c * self.g_m,
            g_chol_s=c * self.g_chol_s,
            g_kappa=c * self.g_kappa,
            g_nu=c * self.g_nu,
        )


@dataclass(frozen=True)
class TrainLogRecord:
    iteration: int
    loss: float
    grad_norm: float
    kappa: float
    nu: float


def _check_labels(episode: Episode) -> None:
    c = episode.n_way
    if episode.query_y.size and (episode.query_y.min() < 0 or episode.query_y.max() >= c):
        raise LabelOutOfRange(
            f"query labels must lie in 0..{c - 1}, got range "
            f"[{episode.query_y.min()}, {episode.query_y.max()}]"
        )


def episode_loss(
    prior: NiwPrior, episode: Episode, mode: str = MODE_MAP, loss_kind: str = GENERATIVE
) -> float:
    """Negative query log likelihood of the episode under the prior.

    Generative sums the true-class log density over the query set;
    discriminative sums the log posterior class probability instead.
    """
    _check_labels(episode)
    model = fit(prior, episode.support, mode=mode)
    scores = log_scores_batch(model, episode.query_x)
    rows = np.arange(scores.shape[0])
    true = scores[rows, episode.query_y]
    if loss_kind == GENERATIVE:
        return float(-np.sum(true))
    if loss_kind != DISCRIMINATIVE:
        raise ValueError(f"unknown loss kind {loss_kind!r}")
    shift = scores.max(axis=1)
    lse = shift + np.log(np.sum(np.exp(scores - shift[:, None]), axis=1))
    return float(-np.sum(true - lse))


def grad(
    prior: NiwPrior, episode: Episode, mode: str = MODE_MAP, loss_kind: str = GENERATIVE
) -> PriorGradient:
    """Exact gradient of episode_loss with respect to the prior parameters."""
    _, g = loss_and_grad(prior, episode, mode, loss_kind)
    return g


def loss_and_grad(
    prior: NiwPrior, episode: Episode, mode: str, loss_kind: str
) -> tuple[float, PriorGradient]:
    _check_labels(episode)
    d = prior.d
    xs = episode.query_x
    ys = episode.query_y
    n = xs.shape[0]
    c = episode.n_way
    s_prior = prior.scale_matrix()

    # forward pass: per-class posterior pieces and query log densities
    posts = []
    scores = np.empty((n, c))
    for j, support in enumerate(episode.support):
        x = np.asarray(support, dtype=np.float64)
        k = x.shape[0]
        mean = x.mean(axis=0)
        centered = x - mean
        kappa_j = prior.kappa + k
        nu_j = prior.nu + k
        m_j = (prior.kappa * prior.m + k * mean) / kappa_j
        dvec = mean - prior.m
        r = prior.kappa * k / kappa_j
        s_j = s_prior + centered.T @ centered + r * np.outer(dvec, dvec)
        s_j = 0.5 * (s_j + s_j.T)
        chol_j = np.linalg.cholesky(s_j)
        delta = xs - m_j
        if mode == MODE_MAP:
            cdiv = nu_j + d + 1.0
            z = solve_triangular(chol_j / np.sqrt(cdiv), delta.T, lower=True, check_finite=False)
            quad = np.sum(z * z, axis=0)
            scores[:, j] = (
                -0.5 * d * numerics.LOG_2PI
                - (numerics.chol_logdet(chol_j) - 0.5 * d * np.log(cdiv))
                - 0.5 * quad
            )
            posts.append((k, mean, dvec, r, kappa_j, nu_j, s_j, chol_j, m_j, cdiv, quad))
        else:
            rho = nu_j - d + 1.0
            s_mult = (kappa_j + 1.0) / (kappa_j * rho)
            chol_v = np.sqrt(s_mult) * chol_j
            z = solve_triangular(chol_v, delta.T, lower=True, check_finite=False)
            quad = np.sum(z * z, axis=0)
            scores[:, j] = numerics.mvt_logpdf_batch(xs, m_j, chol_v, rho)
            posts.append((k, mean, dvec, r, kappa_j, nu_j, s_j, chol_j, m_j, rho, quad))

    rows = np.arange(n)
    true = scores[rows, ys]
    if loss_kind == GENERATIVE:
        loss = float(-np.sum(true))
        weights = np.zeros((n, c))
        weights[rows, ys] = -1.0
    elif loss_kind == DISCRIMINATIVE:
        shift = scores.max(axis=1)
        lse = shift + np.log(np.sum(np.exp(scores - shift[:, None]), axis=1))
        loss = float(-np.sum(true - lse))
        weights = np.exp(scores - lse[:, None])
        weights[rows, ys] -= 1.0
    else:
        raise ValueError(f"unknown loss kind {loss_kind!r}")

    # backward pass
    g_m = np.zeros(d)
    g_s = np.zeros((d, d))
    g_kappa = 0.0
    g_nu = 0.0
    for j, post in enumerate(posts):
        k, mean, dvec, r, kappa_j, nu_j, s_j, chol_j, m_j, extra, quad = post
        w = weights[:, j]
        if not np.any(w):
            continue
        delta = xs - m_j
        if mode == MODE_MAP:
            cdiv = extra
            # u_i = Sigma_j^-1 delta_i with Sigma_j = S_j / cdiv
            z = solve_triangular(chol_j, delta.T, lower=True, check_finite=False)
            u = solve_triangular(chol_j.T, z, lower=False, check_finite=False).T * cdiv
            g_mj = u.T @ w
            sw = float(np.sum(w))
            sigma_inv = cdiv * _chol_inverse_spd(chol_j)
            g_sigma = 0.5 * (u.T @ (w[:, None] * u)) - 0.5 * sw * sigma_inv
            g_sj = g_sigma / cdiv
            g_nu_j = -float(np.sum(g_sigma * s_j)) / (cdiv * cdiv)
            g_kappa_j = 0.0
        else:
            rho = extra
            s_mult = (kappa_j + 1.0) / (kappa_j * rho)
            v = s_mult * s_j
            chol_v = np.sqrt(s_mult) * chol_j
            z = solve_triangular(chol_v, delta.T, lower=True, check_finite=False)
            u = solve_triangular(chol_v.T, z, lower=False, check_finite=False).T
            alpha = (rho + d) / (rho + quad)
            g_mj = u.T @ (w * alpha)
            sw = float(np.sum(w))
            v_inv = _chol_inverse_spd(chol_v)
            g_v = 0.5 * (u.T @ ((w * alpha)[:, None] * u)) - 0.5 * sw * v_inv
            g_sj = s_mult * g_v
            t_j = float(np.sum(g_v * s_j))
            # explicit dof dependence of the Student-t log density
            drho = (
                0.5 * digamma(0.5 * (rho + d))
                - 0.5 * digamma(0.5 * rho)
                - 0.5 * d / rho
                - 0.5 * np.log1p(quad / rho)
                + 0.5 * (rho + d) * quad / (rho * (rho + quad))
            )
            g_nu_j = float(w @ drho) + t_j * (-(kappa_j + 1.0) / (kappa_j * rho * rho))
            g_kappa_j = t_j * (-1.0 / (kappa_j * kappa_j * rho))

        # chain through the conjugate update
        g_m += (prior.kappa / kappa_j) * g_mj - 2.0 * r * (g_sj @ dvec)
        g_kappa += (
            -(k / kappa_j**2) * float(g_mj @ dvec)
            + (k * k / kappa_j**2) * float(dvec @ (g_sj @ dvec))
            + g_kappa_j
        )
        g_nu += g_nu_j
        g_s += g_sj

    g_chol = (g_s + g_s.T) @ prior.chol_s
    g_chol = np.tril(g_chol)
    return loss, PriorGradient(g_m=g_m, g_chol_s=g_chol, g_kappa=g_kappa, g_nu=g_nu)


def _chol_inverse_spd(chol: np.ndarray) -> np.ndarray:
    """Inverse of A = L L^T from its factor."""
    d = chol.shape[0]
    linv = solve_triangular(chol, np.eye(d), lower=True, check_finite=False)
    return linv.T @ linv


def apply_update(
    prior: NiwPrior,
    g: PriorGradient,
    lr: float,
    eps_kappa: float = 1e-3,
    eps_nu: float = 1e-3,
    eps_diag: float = numerics.DIAG_FLOOR,
) -> NiwPrior:
    """One projected gradient step: kappa and nu clipped back to their
    minimum allowable values, L re-lower-triangularized with floored
    diagonal."""
    d = prior.d
    return NiwPrior(
        m=prior.m - lr * g.g_m,
        kappa=max(prior.kappa - lr * g.g_kappa, eps_kappa),
        chol_s=numerics.project_lower(prior.chol_s - lr * g.g_chol_s, eps_diag),
        nu=max(prior.nu - lr * g.g_nu, d - 1.0 + eps_nu),
    )


def _pack(g: PriorGradient, tril_idx) -> np.ndarray:
    return np.concatenate(
        [g.g_m, g.g_chol_s[tril_idx], [g.g_kappa, g.g_nu]]
    )


class _Stepper:
    """Optimizer state over the packed parameter vector."""

    def __init__(self, config: TrainerConfig, size: int):
        self.kind = config.optimizer
        self.beta = config.momentum
        self.t = 0
        self.v = np.zeros(size)
        self.m2 = np.zeros(size)

    def step(self, g: np.ndarray, lr: float) -> np.ndarray:
        """Returns the update vector to subtract from the parameters."""
        if self.kind == OPT_SGD:
            return lr * g
        if self.kind == OPT_MOMENTUM:
            self.v = self.beta * self.v + g
            return lr * self.v
        self.t += 1
        b1, b2, eps = 0.9, 0.999, 1e-8
        self.v = b1 * self.v + (1 - b1) * g
        self.m2 = b2 * self.m2 + (1 - b2) * g * g
        mhat = self.v / (1 - b1**self.t)
        vhat = self.m2 / (1 - b2**self.t)
        return lr * mhat / (np.sqrt(vhat) + eps)


def meta_train(
    dataset: FeatureDataset, config: TrainerConfig
) -> tuple[NiwPrior, list[TrainLogRecord]]:
    """Train the prior over episodes sampled from the dataset.

    Fully deterministic given config.seed: episode t*batch+b is drawn from
    a generator seeded with (seed, episode index), so results do not depend
    on how episode evaluations are scheduled.
    """
    c, k, q = config.ways, config.shots, config.queries
    if dataset.n_classes < c:
        raise InsufficientClasses(f"need {c} classes, dataset has {dataset.n_classes}")
    min_size = min(len(rows) for rows in dataset.class_index.values())
    if min_size < k + q:
        raise InsufficientSamplesPerClass(
            f"smallest class has {min_size} samples, episodes need {k + q}"
        )

    d = dataset.d
    prior = default_prior(d)
    tril_idx = np.tril_indices(d)
    stepper = _Stepper(config, d + len(tril_idx[0]) + 2)
    seed = config.seed & 0xFFFFFFFFFFFFFFFF
    log: list[TrainLogRecord] = []

    for t in range(config.iterations):
        batch_loss = 0.0
        acc: PriorGradient | None = None
        for b in range(config.batch_episodes):
            ep_index = t * config.batch_episodes + b
            rng = np.random.default_rng([seed, ep_index])
            episode = sample_episode(dataset, c, k, q, rng)
            loss, g = loss_and_grad(prior, episode, config.mode, config.loss_kind)
            batch_loss += loss
            if acc is None:
                acc = g
            else:
                acc = PriorGradient(
                    g_m=acc.g_m + g.g_m,
                    g_chol_s=acc.g_chol_s + g.g_chol_s,
                    g_kappa=acc.g_kappa + g.g_kappa,
                    g_nu=acc.g_nu + g.g_nu,
                )
        mean_grad = acc.scaled(1.0 / config.batch_episodes)
        if config.freeze_mean:
            mean_grad = PriorGradient(
                g_m=np.zeros(d),
                g_chol_s=mean_grad.g_chol_s,
                g_kappa=mean_grad.g_kappa,
                g_nu=mean_grad.g_nu,
            )
        lr = config.learning_rate
        if config.schedule == "cosine":
            lr = lr * 0.5 * (1.0 + math.cos(math.pi * t / max(config.iterations, 1)))

        packed = _pack(mean_grad, tril_idx)
        update = stepper.step(packed, lr)
        g_chol = np.zeros((d, d))
        g_chol[tril_idx] = update[d : d + len(tril_idx[0])]
        prior = apply_update(
            prior,
            PriorGradient(
                g_m=update[:d],
                g_chol_s=g_chol,
                g_kappa=float(update[-2]),
                g_nu=float(update[-1]),
            ),
            lr=1.0,  # the stepper already folded the learning rate in
            eps_kappa=config.eps_kappa,
            eps_nu=config.eps_nu,
            eps_diag=config.eps_diag,
        )
        log.append(
            TrainLogRecord(
                iteration=t,
                loss=batch_loss / config.batch_episodes,
                grad_norm=mean_grad.norm(),
                kappa=prior.kappa,
                nu=prior.nu,
            )
        )
    return prior, log

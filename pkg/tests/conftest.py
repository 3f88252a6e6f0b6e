"""Shared helpers: random SPD matrices, random priors and episodes, and the
synthetic benchmark used by the acceptance suite."""

import numpy as np
import pytest

from bayesqda.episodes import Episode, SyntheticTaskSpec, generate_synthetic
from bayesqda.niw import NiwPrior


def random_spd(rng, d, scale=1.0):
    b = rng.normal(size=(d, d))
    return scale * (b @ b.T) + (0.5 * scale) * np.eye(d)


def random_prior(rng, d, kappa=1.7, nu_extra=1.3):
    l = np.tril(rng.normal(size=(d, d)) * 0.3)
    idx = np.arange(d)
    l[idx, idx] = np.abs(l[idx, idx]) + 0.8
    return NiwPrior(m=rng.normal(size=d) * 0.5, kappa=kappa, chol_s=l, nu=d + nu_extra)


def random_episode(rng, d, c, k, q, spread=1.0):
    support = tuple(
        rng.normal(size=(k, d)) + spread * rng.normal(size=d) for _ in range(c)
    )
    query_x = np.vstack([rng.normal(size=(q, d)) for _ in range(c)])
    query_y = np.repeat(np.arange(c), q)
    return Episode(
        support=support, query_x=query_x, query_y=query_y, class_ids=tuple(range(c))
    )


def benchmark_spec(d=16):
    """Ground truth for the synthetic benchmark: anisotropic scale, shifted
    mean, moderate class overlap (kappa=2)."""
    return SyntheticTaskSpec(
        d=d,
        m=np.full(d, 1.5),
        kappa=2.0,
        s=np.diag(np.geomspace(0.5, 8.0, d)),
        nu=float(d + 6),
    )


@pytest.fixture(scope="session")
def bench_pools():
    """Meta-train and meta-test pools (disjoint class draws, same process)."""
    spec = benchmark_spec()
    train = generate_synthetic(spec, 40, 200, np.random.default_rng([0, 1]), name="synth-train")
    test = generate_synthetic(spec, 40, 200, np.random.default_rng([0, 2]), name="synth-test")
    return spec, train, test

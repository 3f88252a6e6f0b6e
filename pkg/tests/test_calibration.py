import numpy as np
import pytest

from bayesqda.calibration import (
    CalibrationRecord,
    bin_of,
    confidences_at,
    ece,
    fit_temperature,
    report_table,
    temperature_grid,
)
from bayesqda.episodes import sample_episode
from bayesqda.errors import EmptyInput
from bayesqda.harness import mle_scorer, run_protocol
from bayesqda.niw import default_prior

from test_episodes import toy_dataset


class TestEce:
    def test_perfectly_calibrated_confident(self):
        records = [CalibrationRecord(1.0, True)] * 10
        assert ece(records, 20).ece == 0.0

    def test_hand_case_two_records(self):
        # both in the 0.9 bin, accuracy 0.5 vs confidence 0.9
        records = [CalibrationRecord(0.9, True), CalibrationRecord(0.9, False)]
        report = ece(records, 20)
        assert report.ece == pytest.approx(0.4, abs=1e-12)
        k = bin_of(0.9, 20)
        assert report.bins[k].count == 2
        assert report.bins[k].mean_confidence == pytest.approx(0.9)
        assert report.bins[k].accuracy == pytest.approx(0.5)

    def test_accuracy_equals_confidence_is_zero(self):
        records = [CalibrationRecord(0.75, True)] * 3 + [CalibrationRecord(0.75, False)]
        assert ece(records, 20).ece == pytest.approx(0.0, abs=1e-12)

    def test_order_invariant(self):
        rng = np.random.default_rng(0)
        conf = rng.uniform(0.2, 1.0, size=200)
        correct = rng.uniform(size=200) < conf
        a = ece((conf, correct), 20).ece
        perm = rng.permutation(200)
        b = ece((conf[perm], correct[perm]), 20).ece
        assert a == pytest.approx(b, abs=1e-12)

    def test_bin_rule(self):
        b = 20
        assert bin_of(0.0, b) == 0
        assert bin_of(0.049999, b) == 0
        assert bin_of(0.05, b) == 1
        assert bin_of(0.9999, b) == 19
        assert bin_of(1.0, b) == 19  # top edge closed

    def test_counts_sum_to_n(self):
        rng = np.random.default_rng(1)
        conf = rng.uniform(size=500)
        correct = rng.uniform(size=500) < 0.5
        report = ece((conf, correct), 20)
        assert sum(s.count for s in report.bins) == 500
        assert 0.0 <= report.ece <= 1.0

    def test_empty_rejected(self):
        with pytest.raises(EmptyInput):
            ece([], 20)

    def test_report_table_format(self):
        report = ece([CalibrationRecord(0.9, True)], 4)
        lines = report_table(report).strip().splitlines()
        assert lines[0].startswith("# bin")
        assert len(lines) == 6  # header + 4 bins + footer


class TestTemperatureGrid:
    def test_contains_exact_identity(self):
        grid = temperature_grid()
        assert grid.size == 101
        assert 1.0 in grid
        assert grid[0] == pytest.approx(0.05)
        assert grid[-1] == pytest.approx(20.0)

    def test_confidence_limit_uniform(self):
        scores = np.array([[3.0, 1.0, 0.0, -2.0]])
        conf = confidences_at(scores, 1e9)
        assert conf[0] == pytest.approx(0.25, abs=1e-6)


class TestFitTemperature:
    def test_returns_grid_member(self):
        ds = toy_dataset(classes=8, per_class=20, d=3, seed=2)
        rng = np.random.default_rng(3)
        eps = [sample_episode(ds, 3, 2, 5, rng) for _ in range(10)]
        t = fit_temperature(default_prior(3), eps, "map")
        assert t in temperature_grid()

    def test_fitted_never_worse_than_identity(self):
        # uncalibrated baseline scored on its own fitting episodes
        ds = toy_dataset(classes=10, per_class=30, d=4, seed=4)
        rng = np.random.default_rng(5)
        eps = [sample_episode(ds, 4, 3, 5, rng) for _ in range(20)]
        prior = default_prior(4)
        t = fit_temperature(prior, eps, "fb")

        from bayesqda.classifier import fit, log_scores_batch

        scores = [log_scores_batch(fit(prior, e.support, mode="fb"), e.query_x) for e in eps]
        correct = np.concatenate(
            [np.argmax(s, axis=1) == e.query_y for s, e in zip(scores, eps)]
        )
        conf_1 = np.concatenate([confidences_at(s, 1.0) for s in scores])
        conf_t = np.concatenate([confidences_at(s, t) for s in scores])
        assert ece((conf_t, correct), 20).ece <= ece((conf_1, correct), 20).ece

    def test_mle_baseline_improved_on_fitting_set(self):
        from conftest import benchmark_spec
        from bayesqda.episodes import generate_synthetic

        pool = generate_synthetic(benchmark_spec(8), 20, 60, np.random.default_rng(6))
        run = run_protocol(pool, 5, 5, 10, 60, mle_scorer(), seed=0)
        base = ece((run.confidences, run.corrects), 20).ece

        # fit a temperature on the same episode stream
        scores = []
        correct = []
        for e in range(60):
            ep = sample_episode(pool, 5, 5, 10, np.random.default_rng([0, e]))
            s = mle_scorer()(ep)
            scores.append(s)
            correct.append(np.argmax(s, axis=1) == ep.query_y)
        correct = np.concatenate(correct)
        grid = temperature_grid()
        eces = [
            ece((np.concatenate([confidences_at(s, t) for s in scores]), correct), 20).ece
            for t in grid
        ]
        # T = 1 is in the grid, so the fitted value can never be worse; the
        # ridge baseline's score gaps are so extreme that no bounded
        # temperature can do much better either
        assert min(eces) <= base

    def test_empty_episodes_rejected(self):
        with pytest.raises(EmptyInput):
            fit_temperature(default_prior(2), [], "map")

import math

import numpy as np
import pytest

import oracles
from pwvqa import datagen, metrics
from pwvqa.errors import ContractError, DimensionError, DomainError

# Frozen from tests/oracles.py: js_divergence([0.5, 0.5], [0.9, 0.1]).
JS_DERIVED = 0.10174922507919669


class TestJsDivergence:
    def test_identical_distributions(self):
        p = np.array([0.2, 0.3, 0.5])
        assert metrics.js_divergence(p, p) == 0.0

    def test_disjoint_supports(self):
        assert abs(metrics.js_divergence([1.0, 0.0], [0.0, 1.0]) - math.log(2)) < 1e-12

    def test_derived_value(self):
        got = metrics.js_divergence([0.5, 0.5], [0.9, 0.1])
        assert abs(got - JS_DERIVED) < 1e-12
        assert abs(got - float(oracles.js_divergence([0.5, 0.5], [0.9, 0.1]))) < 1e-12

    def test_symmetry_exact(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            p = rng.dirichlet(np.ones(6))
            q = rng.dirichlet(np.ones(6))
            assert metrics.js_divergence(p, q) == metrics.js_divergence(q, p)

    def test_range(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            p = rng.dirichlet(np.full(5, 0.3))
            q = rng.dirichlet(np.full(5, 0.3))
            js = metrics.js_divergence(p, q)
            assert 0.0 <= js <= math.log(2) + 1e-12

    def test_validation(self):
        with pytest.raises(DomainError):
            metrics.js_divergence([-0.1, 1.1], [0.5, 0.5])
        with pytest.raises(DomainError):
            metrics.js_divergence([0.4, 0.4], [0.5, 0.5])
        with pytest.raises(DimensionError):
            metrics.js_divergence([0.5, 0.5], [1.0])


def _split(seed=5, train_size=300):
    train, _ = datagen.generate(
        datagen.GenConfig(train_size=train_size, test_size=10, seed=seed)
    )
    return train


class TestEvaluate:
    def test_oracle_predictor_is_perfect(self):
        split = _split()
        report = metrics.evaluate(lambda s: s.label, split)
        assert report.acc_all == 1.0
        np.testing.assert_array_equal(report.acc_per_qtype, 1.0)
        assert report.answer_distribution.sum() == pytest.approx(1.0, abs=1e-9)

    def test_constant_predictor_matches_frequency(self):
        split = _split()
        _, _, labels, _ = split.feature_arrays()
        for answer in (0, 3):
            report = metrics.evaluate(lambda s, a=answer: a, split)
            assert report.acc_all == np.mean(labels == answer)
            assert report.answer_distribution[answer] == 1.0

    def test_matches_independent_counting(self):
        split = _split(seed=6)
        rng = np.random.default_rng(7)
        preds = {s.sample_id: int(rng.integers(split.vocab_size)) for s in split.samples}
        report = metrics.evaluate(lambda s: preds[s.sample_id], split)

        # plain-loop recount
        n_correct = 0
        per_type_correct = [0] * split.num_qtypes
        per_type_total = [0] * split.num_qtypes
        hist = [0] * split.vocab_size
        for s in split.samples:
            p = preds[s.sample_id]
            hist[p] += 1
            per_type_total[s.qtype] += 1
            if p == s.label:
                n_correct += 1
                per_type_correct[s.qtype] += 1
        n = len(split.samples)
        assert report.acc_all == n_correct / n
        for t in range(split.num_qtypes):
            assert report.acc_per_qtype[t] == per_type_correct[t] / per_type_total[t]
        np.testing.assert_array_equal(report.answer_distribution, np.array(hist) / n)

        label_hist = np.zeros(split.vocab_size)
        for s in split.samples:
            label_hist[s.label] += 1
        expected_js = float(
            oracles.js_divergence(
                (np.array(hist) / n).tolist(), (label_hist / n).tolist()
            )
        )
        assert abs(report.js_divergence_to_test - expected_js) < 1e-12

    def test_accuracy_decomposes_over_qtypes(self):
        split = _split(seed=8)
        rng = np.random.default_rng(9)
        preds = {s.sample_id: int(rng.integers(split.vocab_size)) for s in split.samples}
        report = metrics.evaluate(lambda s: preds[s.sample_id], split)
        _, _, _, qtypes = split.feature_arrays()
        counts = np.bincount(qtypes, minlength=split.num_qtypes)
        weighted = (report.acc_per_qtype * counts).sum() / counts.sum()
        assert report.acc_all == pytest.approx(weighted, abs=1e-15)

    def test_empty_split_rejected(self):
        split = _split()
        split.samples = []
        with pytest.raises(ContractError):
            metrics.evaluate(lambda s: 0, split)

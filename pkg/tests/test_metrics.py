import math

import numpy as np
import pytest
from sklearn.metrics import f1_score, log_loss

from utils.errors import EmptyInputError, ShapeError
from utils.metrics import (ConfusionMatrix, batch_f1_macro, bce, confusion_counts, f1_scores,
                           metric_report, normalize_confusion)


class TestBce:
    def test_half_probability_is_ln2(self):
        assert bce(np.array([1]), np.array([0.5])) == pytest.approx(math.log(2), abs=1e-4)

    def test_certain_correct_prediction_hits_clip_floor(self):
        assert bce(np.array([1]), np.array([1.0])) <= 1e-6

    def test_two_sample_example(self):
        value = bce(np.array([1, 0]), np.array([0.9, 0.1]))
        assert value == pytest.approx(-math.log(0.9), abs=1e-4)

    def test_moving_toward_label_lowers_loss(self):
        y = np.array([1, 0, 1])
        p = np.array([0.6, 0.3, 0.4])
        better = p.copy()
        better[2] = 0.7
        assert bce(y, better) < bce(y, p)
        assert bce(y, p) >= 0

    def test_empty_input(self):
        with pytest.raises(EmptyInputError):
            bce(np.array([]), np.array([]))

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            bce(np.array([1, 0]), np.array([0.5]))

    def test_matches_log_loss_on_clipped_probabilities(self):
        rng = np.random.default_rng(8)
        y = rng.integers(0, 2, 30)
        p = rng.uniform(0, 1, 30)
        p[:3] = [0.0, 1.0, 0.5]
        expected = log_loss(y, np.clip(p, 1e-7, 1 - 1e-7), labels=[0, 1])
        assert bce(y, p) == pytest.approx(expected)

    def test_single_class_labels(self):
        assert bce(np.zeros(3, dtype=int), np.array([0.5, 0.5, 0.5])) == pytest.approx(math.log(2))


class TestF1:
    def test_perfect(self):
        y = np.array([0, 1, 1, 0])
        macro, weighted, _ = f1_scores(y, y)
        assert macro == weighted == 1.0

    def test_hand_computed_example(self):
        macro, weighted, c = f1_scores(np.array([1, 1, 0, 0]), np.array([1, 0, 0, 0]))
        assert (c.tp, c.fn, c.tn, c.fp) == (1, 1, 2, 0)
        assert macro == pytest.approx(11 / 15)
        assert weighted == pytest.approx(11 / 15)

    def test_all_wrong(self):
        y = np.array([0, 1, 1, 0])
        macro, _, _ = f1_scores(y, 1 - y)
        assert macro == 0.0

    def test_permutation_invariance(self):
        rng = np.random.default_rng(3)
        y = rng.integers(0, 2, 40)
        pred = rng.integers(0, 2, 40)
        order = rng.permutation(40)
        assert f1_scores(y, pred)[:2] == pytest.approx(f1_scores(y[order], pred[order])[:2])

    def test_equal_support_macro_equals_weighted(self):
        y = np.array([0, 0, 0, 1, 1, 1])
        pred = np.array([0, 1, 1, 1, 0, 1])
        macro, weighted, _ = f1_scores(y, pred)
        assert macro == pytest.approx(weighted)

    def test_matches_sklearn(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            y = rng.integers(0, 2, 30)
            pred = rng.integers(0, 2, 30)
            macro, weighted, _ = f1_scores(y, pred)
            assert macro == pytest.approx(f1_score(y, pred, average='macro', zero_division=0))
            assert weighted == pytest.approx(
                f1_score(y, pred, average='weighted', zero_division=0))

    def test_single_class_predictions_use_zero_convention(self):
        y = np.array([0, 0, 1, 1])
        macro, _, _ = f1_scores(y, np.zeros(4, dtype=int))
        assert macro == pytest.approx((2 / 3) / 2)

    def test_absent_positive_class_scores_zero(self):
        y = np.zeros(4, dtype=int)
        macro, weighted, c = f1_scores(y, y)
        assert macro == pytest.approx(0.5)
        assert weighted == pytest.approx(1.0)
        assert (c.tn, c.tp) == (4, 0)

    def test_empty_input(self):
        with pytest.raises(EmptyInputError):
            f1_scores(np.array([]), np.array([]))


def test_confusion_counts_match_brute_force():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        y = rng.integers(0, 2, 20)
        pred = rng.integers(0, 2, 20)
        expected = {'tp': 0, 'fp': 0, 'tn': 0, 'fn': 0}
        for truth, guess in zip(y, pred):
            if truth == 1 and guess == 1:
                expected['tp'] += 1
            elif truth == 0 and guess == 1:
                expected['fp'] += 1
            elif truth == 0 and guess == 0:
                expected['tn'] += 1
            else:
                expected['fn'] += 1
        c = confusion_counts(y, pred)
        assert c.as_dict() == expected
        assert c.total == 20


def test_batch_f1_matches_single_rows():
    rng = np.random.default_rng(5)
    y = rng.integers(0, 2, 25)
    predictions = rng.integers(0, 2, (12, 25))
    batch = batch_f1_macro(predictions, y)
    for row, value in zip(predictions, batch):
        assert value == pytest.approx(f1_scores(y, row)[0])


class TestNormalizeConfusion:
    def test_direct_division(self):
        rows = normalize_confusion(ConfusionMatrix(tp=3, fp=2, tn=2, fn=1))
        np.testing.assert_allclose(rows, [[0.5, 0.5], [0.25, 0.75]])

    def test_diagonal_is_identity(self):
        rows = normalize_confusion(ConfusionMatrix(tp=4, fp=0, tn=7, fn=0))
        np.testing.assert_allclose(rows, np.eye(2))

    def test_empty_positive_class_gives_zero_row(self):
        rows = normalize_confusion(ConfusionMatrix(tp=0, fp=1, tn=3, fn=0))
        np.testing.assert_allclose(rows[1], [0.0, 0.0])
        assert rows[0].sum() == pytest.approx(1.0)


def test_metric_report_with_and_without_probabilities():
    y = np.array([1, 0, 1, 0])
    pred = np.array([1, 0, 0, 0])
    report = metric_report(y, pred, np.array([0.8, 0.2, 0.4, 0.1]))
    assert report.bce is not None and report.bce > 0
    assert report.as_dict()['confusion'] == {'tp': 1, 'fp': 0, 'tn': 2, 'fn': 1}
    assert metric_report(y, pred).bce is None

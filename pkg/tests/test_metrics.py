import math

import numpy as np
import oracles
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lungkit.errors import ShapeError
from lungkit.metrics import (
    ConfusionCounts,
    aggregate,
    binary_scores,
    classification_report,
    dice,
    iou,
    roc_auc,
    roc_curve,
    segmentation_scores,
)


def four_pixel_pair():
    a = np.zeros((4, 4), bool)
    b = np.zeros((4, 4), bool)
    a[0, :4] = True
    b[0, 2:4] = b[1, :2] = True
    return a, b


def test_dice_examples():
    a, b = four_pixel_pair()
    assert dice(a, a) == 1.0
    assert dice(a, b) == 0.5
    assert dice(a, np.roll(a, 2, axis=0)) == 0.0
    assert dice(np.zeros(3), np.zeros(3)) == 1.0


def test_iou_examples():
    a, b = four_pixel_pair()
    assert iou(a, b) == pytest.approx(1 / 3, abs=1e-15)
    assert iou(b, b) == 1.0


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        dice(np.zeros((2, 2)), np.zeros((2, 3)))


@given(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=1, max_size=60))
def test_dice_iou_identity(pairs):
    a = np.array([p[0] for p in pairs])
    b = np.array([p[1] for p in pairs])
    j = iou(a, b)
    assert abs(dice(a, b) - 2 * j / (1 + j)) <= 1e-12
    assert 0.0 <= j <= dice(a, b) <= 1.0


def test_confusion_fixture():
    r = classification_report(ConfusionCounts(tp=2, fp=1, fn=1, tn=6))
    assert r == {"accuracy": 0.8, "precision": 2 / 3, "recall": 2 / 3, "f1": 2 / 3}


def test_confusion_perfect_and_degenerate():
    assert set(classification_report(ConfusionCounts(5, 0, 0, 4)).values()) == {1.0}
    r = classification_report(ConfusionCounts(tp=0, fp=0, fn=3, tn=7))
    assert r == {"accuracy": 0.7, "precision": 0.0, "recall": 0.0, "f1": 0.0}
    with pytest.raises(ValueError):
        classification_report(ConfusionCounts(0, 0, 0, 0))


def test_from_predictions():
    c = ConfusionCounts.from_predictions([1, 1, 0, 0, 1], [1, 0, 1, 0, 1])
    assert (c.tp, c.fp, c.fn, c.tn) == (2, 1, 1, 1)


def test_roc_examples():
    assert roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    assert roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert roc_auc([0.5] * 6, [0, 1, 0, 1, 0, 1]) == 0.5


def test_roc_curve_shape():
    c = roc_curve([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
    assert c.points[0] == (0.0, 0.0) and c.points[-1] == (1.0, 1.0)
    assert np.all(np.diff(c.fpr) >= 0) and np.all(np.diff(c.tpr) >= 0)
    assert np.isinf(c.thresholds[0])


def test_roc_errors():
    with pytest.raises(ValueError):
        roc_auc([0.1, 0.2], [1, 1])
    with pytest.raises(ValueError):
        roc_auc([0.1, 0.2], [0, 2])


def test_auc_matches_concordance(rng):
    for _ in range(50):
        n = int(rng.integers(2, 120))
        y = rng.integers(0, 2, n)
        y[:2] = [0, 1]
        s = np.round(rng.random(n), int(rng.integers(1, 3)))  # coarse rounding forces ties
        assert abs(roc_auc(s, y) - oracles.concordance_auc(s, y)) <= 1e-12


def test_aggregate_examples():
    mean, sd = aggregate([0.9, 0.95, 1.0, 0.85, 0.8])
    assert mean == pytest.approx(0.9, abs=1e-15)
    assert sd == pytest.approx(math.sqrt(0.025 / 4), abs=1e-15)
    assert round(sd, 5) == 0.07906
    assert aggregate([0.3]) == (0.3, 0.0)
    assert aggregate([2.5] * 4) == (2.5, 0.0)
    with pytest.raises(ValueError):
        aggregate([])


def test_segmentation_scores_threshold():
    prob = np.array([[0.2, 0.5, 0.51, 0.9]])
    truth = np.array([[0, 0, 1, 1]], bool)
    out = segmentation_scores(prob, truth)
    assert out["dice"] == 1.0 and out["accuracy"] == 1.0


def test_binary_scores_single_class_omits_auc():
    out = binary_scores([0.9, 0.8], [1, 1])
    assert "auc" not in out and out["accuracy"] == 1.0
    both = binary_scores([0.9, 0.1], [1, 0])
    assert both["auc"] == 1.0

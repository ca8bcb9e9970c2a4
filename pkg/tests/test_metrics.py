import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uanet.metrics import (
    Confusion,
    confusion,
    f1,
    format_csv,
    format_table,
    iou,
    precision,
    recall,
    scores,
    uncertainty_visual,
)
from uanet.tensor import ShapeError


def naive_counts(logits, gt):
    tp = fp = fn = tn = 0
    for x, t in zip(logits.reshape(-1).tolist(), gt.reshape(-1).tolist()):
        p = x >= 0
        if p and t:
            tp += 1
        elif p:
            fp += 1
        elif t:
            fn += 1
        else:
            tn += 1
    return tp, fp, fn, tn


def naive_scores(tp, fp, fn):
    """Metric definitions evaluated straight from the counts."""
    out = {}
    out["IoU"] = tp / (tp + fp + fn) if tp + fp + fn else 1.0
    out["Pre"] = tp / (tp + fp) if tp + fp else (1.0 if fn == 0 else 0.0)
    out["Recall"] = tp / (tp + fn) if tp + fn else (1.0 if fp == 0 else 0.0)
    p, r = out["Pre"], out["Recall"]
    out["F1"] = 2 * p * r / (p + r) if p + r else 0.0
    return out


def random_case(rng):
    h, w = rng.integers(1, 12, size=2)
    gt = (rng.random((1, h, w)) < rng.random()).astype(np.float64)
    logits = rng.normal(size=(1, h, w))
    # some exact zeros to exercise the threshold tie
    logits[rng.random((1, h, w)) < 0.1] = 0.0
    return logits, gt


class TestConfusion:
    def test_matches_per_pixel_oracle(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            logits, gt = random_case(rng)
            c = confusion(logits, gt)
            assert (c.tp, c.fp, c.fn, c.tn) == naive_counts(logits, gt)
            ref = naive_scores(c.tp, c.fp, c.fn)
            assert scores(c) == ref

    def test_worked_case(self):
        # 10 pixels of truth; prediction hits 6, misses 4, adds 2 false alarms
        gt = np.zeros((1, 4, 5))
        gt.reshape(-1)[:10] = 1
        logits = np.full((1, 4, 5), -1.0)
        logits.reshape(-1)[:6] = 1
        logits.reshape(-1)[10:12] = 1
        c = confusion(logits, gt)
        assert c == Confusion(tp=6, fp=2, fn=4, tn=8)
        assert iou(c) == pytest.approx(0.5)
        assert precision(c) == pytest.approx(0.75)
        assert recall(c) == pytest.approx(0.6)
        assert f1(c) == pytest.approx(2 / 3)

    def test_zero_logit_counts_as_building(self):
        assert confusion(np.zeros((1, 1, 1)), np.ones((1, 1, 1))).tp == 1

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            confusion(np.zeros((1, 4, 4)), np.zeros((1, 8, 8)))

    def test_addition_pools_counts(self):
        assert Confusion(1, 2, 3, 4) + Confusion(10, 20, 30, 40) == Confusion(11, 22, 33, 44)
        assert Confusion(1, 2, 3, 4).total == 10


class TestConventions:
    def test_both_empty_is_perfect(self):
        c = Confusion(tn=5)
        assert scores(c) == {"IoU": 1.0, "F1": 1.0, "Pre": 1.0, "Recall": 1.0}

    def test_empty_prediction_nonempty_truth(self):
        c = Confusion(fn=3, tn=2)
        assert precision(c) == 0.0 and recall(c) == 0.0 and f1(c) == 0.0 and iou(c) == 0.0

    def test_false_alarm_on_empty_truth(self):
        c = Confusion(fp=3, tn=2)
        assert recall(c) == 0.0 and precision(c) == 0.0 and iou(c) == 0.0

    @settings(max_examples=300, deadline=None)
    @given(st.integers(0, 50), st.integers(0, 50), st.integers(0, 50))
    def test_dice_jaccard_identity(self, tp, fp, fn):
        c = Confusion(tp, fp, fn, 0)
        if tp + fp + fn == 0:
            return
        j = iou(c)
        assert abs(f1(c) - 2 * j / (1 + j)) <= 1e-12


class TestUncertaintyVisual:
    @settings(max_examples=100, deadline=None)
    @given(st.floats(-30, 30, allow_nan=False))
    def test_symmetric_and_bounded(self, x):
        u, _ = uncertainty_visual(np.array([x]))
        u_neg, _ = uncertainty_visual(np.array([-x]))
        assert 0 <= u[0] <= 0.5
        assert u[0] == pytest.approx(u_neg[0], abs=1e-15)

    def test_equals_min_of_probabilities(self, rng):
        x = rng.normal(scale=4, size=(1, 6, 6))
        u, mean = uncertainty_visual(x)
        p = 1 / (1 + np.exp(-x))
        np.testing.assert_allclose(u, np.minimum(p, 1 - p), atol=1e-15)
        assert mean == pytest.approx(u.mean())
        assert uncertainty_visual(np.zeros((1, 2, 2)))[1] == 0.5


class TestFormatting:
    def test_table_has_percentages(self):
        text = format_table({"M5": scores(Confusion(6, 2, 4, 8))})
        header, row = text.splitlines()
        assert header.split() == ["IoU", "F1", "Pre", "Recall"]
        assert row.split() == ["M5", "50.00", "66.67", "75.00", "60.00"]

    def test_csv(self):
        text = format_csv({"case1": scores(Confusion(tn=1))}, label="variant",
                          extra={"case1": {"seed": 3}})
        assert text.splitlines() == ["variant,IoU,F1,Pre,Recall,seed",
                                     "case1,100.00,100.00,100.00,100.00,3"]

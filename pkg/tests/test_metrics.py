"""Confusion-matrix metrics, fusion indicators and report serialization."""

import itertools
import json
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from claire.errors import EmptyReportError, InvalidInputError
from claire.metrics import (GateStats, MetricsReport, build_report, confusion_matrix, empty_confusion,
                            fusion_indicators, gate_dominance, iou_dice, kappa, overall_accuracy)


def brute_force(gt, pred, n):
    """Exact rational metrics by direct pixel recount (no confusion matrix)."""
    gt, pred = list(np.ravel(gt)), list(np.ravel(pred))
    total = len(gt)
    iou, dice = [], []
    for c in range(n):
        tp = sum(g == c and p == c for g, p in zip(gt, pred))
        fp = sum(g != c and p == c for g, p in zip(gt, pred))
        fn = sum(g == c and p != c for g, p in zip(gt, pred))
        if tp + fp + fn == 0:
            iou.append(None)
            dice.append(None)
        else:
            iou.append(Fraction(tp, tp + fp + fn))
            dice.append(Fraction(2 * tp, 2 * tp + fp + fn))
    po = Fraction(sum(g == p for g, p in zip(gt, pred)), total)
    pe = sum(Fraction(sum(g == c for g in gt) * sum(p == c for p in pred), total * total) for c in range(n))
    k = Fraction(0) if pe == 1 else (po - pe) / (1 - pe)
    return iou, dice, po, k


def random_cm(rng, n):
    cm = rng.integers(0, 50, (n, n))
    cm[rng.uniform(size=(n, n)) < 0.3] = 0
    if cm.sum() == 0:
        cm[0, 0] = 1
    return cm


# -- confusion matrix ----------------------------------------------------------

def test_confusion_worked_example():
    cm = confusion_matrix([[0, 1], [1, 1]], [[0, 0], [1, 1]], 2)
    assert cm.tolist() == [[1, 1], [0, 2]]


def test_confusion_perfect_is_diagonal():
    gt = np.array([0, 2, 2, 1, 2])
    cm = confusion_matrix(gt, gt, 3)
    assert np.array_equal(cm, np.diag([1, 1, 3]))


def test_confusion_errors_and_empty():
    assert np.array_equal(empty_confusion(3), np.zeros((3, 3)))
    with pytest.raises(InvalidInputError):
        confusion_matrix(np.zeros(3, int), np.zeros(4, int), 2)
    with pytest.raises(InvalidInputError):
        confusion_matrix(np.array([0, 2]), np.array([0, 1]), 2)


# -- worked examples -------------------------------------------------------------

def test_iou_dice_worked_example():
    iou, miou, dice, mdice = iou_dice([[1, 1], [0, 2]])
    assert iou.tolist() == pytest.approx([1 / 2, 2 / 3], abs=1e-15)
    assert dice.tolist() == pytest.approx([2 / 3, 4 / 5], abs=1e-15)
    assert miou == pytest.approx(7 / 12, abs=1e-15)
    assert overall_accuracy([[1, 1], [0, 2]]) == pytest.approx(3 / 4, abs=1e-15)


def test_kappa_worked_example():
    assert kappa([[2, 1], [1, 2]]) == pytest.approx(1 / 3, abs=1e-15)


def test_perfect_and_chance_level():
    cm = np.diag([3, 4, 5])
    iou, miou, dice, _ = iou_dice(cm)
    assert miou == 1 and (iou == 1).all() and (dice == 1).all()
    assert overall_accuracy(cm) == 1 and kappa(cm) == 1
    assert kappa([[1, 1], [1, 1]]) == 0.0
    assert kappa([[5, 0], [0, 0]]) == 0.0  # chance agreement 1


def test_empty_matrix_errors():
    with pytest.raises(EmptyReportError):
        overall_accuracy(np.zeros((2, 2)))
    with pytest.raises(EmptyReportError):
        build_report(np.zeros((2, 2), int))


def test_absent_class_excluded_from_means():
    iou, miou, _, _ = iou_dice([[2, 0, 0], [0, 0, 0], [1, 0, 1]])
    assert math.isnan(iou[1])
    assert miou == pytest.approx((2 / 3 + 1 / 2) / 2)


# -- oracle equivalence ------------------------------------------------------------

def test_exhaustive_two_class_grids_match_brute_force():
    grids = [np.array(b).reshape(2, 2) for b in itertools.product((0, 1), repeat=4)]
    checked = 0
    for gt in grids:
        for pred in grids:
            cm = confusion_matrix(pred, gt, 2)
            iou, _, dice, _ = iou_dice(cm)
            b_iou, b_dice, b_oa, b_k = brute_force(gt, pred, 2)
            for c in range(2):
                if b_iou[c] is None:
                    assert math.isnan(iou[c]) and math.isnan(dice[c])
                else:
                    assert iou[c] == float(b_iou[c]) and dice[c] == float(b_dice[c])
            assert overall_accuracy(cm) == float(b_oa)
            assert kappa(cm) == pytest.approx(float(b_k), abs=1e-15)
            checked += 1
    assert checked == 256


def test_random_matrices_dice_identity_and_kappa_bound():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        cm = random_cm(rng, int(rng.integers(2, 7)))
        iou, _, dice, _ = iou_dice(cm)
        ok = ~np.isnan(iou)
        assert np.allclose(dice[ok], 2 * iou[ok] / (1 + iou[ok]), atol=1e-15, rtol=0)
        assert kappa(cm) <= overall_accuracy(cm) + 1e-15


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 5), st.data())
def test_accumulation_linearity(n, data):
    a = data.draw(arrays(np.int64, (2, 9), elements=st.integers(0, n - 1)))
    b = data.draw(arrays(np.int64, (2, 9), elements=st.integers(0, n - 1)))
    summed = confusion_matrix(a[0], a[1], n) + confusion_matrix(b[0], b[1], n)
    pooled = confusion_matrix(np.concatenate([a[0], b[0]]), np.concatenate([a[1], b[1]]), n)
    assert np.array_equal(summed, pooled)
    assert overall_accuracy(summed) == overall_accuracy(pooled)


def test_uniform_random_prediction_accuracy_near_chance():
    rng = np.random.default_rng(7)
    n, pixels = 4, 40_000
    gt = np.repeat(np.arange(n), pixels // n)
    pred = rng.integers(0, n, pixels)
    sigma = math.sqrt((1 / n) * (1 - 1 / n) / pixels)
    assert abs(overall_accuracy(confusion_matrix(pred, gt, n)) - 1 / n) < 3 * sigma


# -- fusion indicators -------------------------------------------------------------

def test_equal_gates_are_balanced_and_complementary():
    g = np.full((2, 4, 4), 0.3)
    rgb, sar, comp = gate_dominance(g)
    assert rgb == pytest.approx(0.5) and sar == pytest.approx(0.5) and comp == pytest.approx(1.0)


def test_zero_sar_gate():
    rng = np.random.default_rng(0)
    g = np.stack([rng.uniform(0.1, 1, (5, 5)), np.zeros((5, 5))])
    rgb, sar, comp = gate_dominance(g)
    assert sar == 0 and rgb == 1 and comp == 0


def test_fusion_quality_definition():
    cm = np.array([[45, 5], [5, 45]])  # OA 0.90
    out = fusion_indicators(cm=cm, per_modality_oa=(0.85, 0.80))
    assert out["fusion_quality"] == pytest.approx(0.05, abs=1e-12)
    assert out["rgb_dominance"] is None


def test_gate_stats_merge_matches_pooled():
    rng = np.random.default_rng(1)
    a, b = rng.uniform(size=(3, 2, 4, 4)), rng.uniform(size=(2, 2, 4, 4))
    merged = GateStats().update(a).update(b).indicators()
    pooled = gate_dominance(np.concatenate([a, b]))
    assert np.allclose(merged, pooled, atol=1e-12)
    assert GateStats().indicators() is None


def test_missing_gates_leave_fields_absent():
    rep = build_report([[3, 1], [0, 4]])
    assert rep.rgb_dominance is None and rep.fusion_quality is None
    assert rep.present_fields() == list(MetricsReport.METRIC_FIELDS)


# -- report -----------------------------------------------------------------------

def test_report_fields_and_bias():
    cm = np.array([[6, 2, 0], [0, 1, 0], [1, 0, 0]])  # class 2 never predicted
    rep = build_report(cm, gates=np.full((2, 2, 2), 0.5), class_names=["a", "b", "c"], sample_id="s1")
    assert rep.per_class_iou[2] == 0.0
    assert rep.per_class_precision[2] is None  # never predicted
    assert rep.detection_rate == pytest.approx([6 / 8, 1.0, 0.0])
    signed = np.array(rep.per_class_coverage_pred) - np.array(rep.per_class_coverage_gt)
    assert rep.per_class_signed_error == pytest.approx(signed.tolist())
    assert rep.systematic_bias == pytest.approx(np.abs(signed).max())
    assert rep.per_class_coverage_gt == pytest.approx([80.0, 10.0, 10.0])


def test_report_json_round_trip(tmp_path):
    rep = build_report([[3, 1], [0, 4]], gates=np.random.default_rng(0).uniform(size=(2, 3, 3)),
                       per_modality_oa=(0.5, 0.6), class_names=["x", "y"], metadata={"cloud_fraction": 0.4})
    path = tmp_path / "r.json"
    rep.to_json(path)
    back = MetricsReport.from_json(path)
    assert back == rep
    json.loads(path.read_text())  # strict JSON (no NaN)
    rep.write_csv(tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text().splitlines()[0].startswith("class,per_class_iou")


def test_absent_class_serializes_as_null():
    rep = build_report([[2, 0, 0], [0, 0, 0], [0, 0, 3]])
    d = json.loads(rep.to_json())
    assert d["per_class_iou"][1] is None

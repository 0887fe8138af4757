"""Confusion-matrix metrics and gate-derived fusion indicators.

Rows of the confusion matrix are ground truth, columns are predictions.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import EmptyReportError, InvalidInputError


def confusion_matrix(pred, gt, num_classes: int) -> np.ndarray:
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise InvalidInputError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    for name, a in (("prediction", pred), ("ground truth", gt)):
        if a.size and (a.min() < 0 or a.max() >= num_classes):
            raise InvalidInputError(f"{name} labels outside [0, {num_classes - 1}]")
    idx = gt.astype(np.int64).ravel() * num_classes + pred.astype(np.int64).ravel()
    return np.bincount(idx, minlength=num_classes ** 2).reshape(num_classes, num_classes)


def empty_confusion(num_classes: int) -> np.ndarray:
    return np.zeros((num_classes, num_classes), dtype=np.int64)


def _tp_fp_fn(cm):
    cm = np.asarray(cm, dtype=np.float64)
    tp = np.diag(cm)
    return tp, cm.sum(axis=0) - tp, cm.sum(axis=1) - tp


def present_classes(cm) -> np.ndarray:
    """Classes occurring in the ground truth or in the prediction."""
    cm = np.asarray(cm)
    return (cm.sum(axis=0) + cm.sum(axis=1)) > 0


def iou_dice(cm):
    """Per-class IoU, mIoU, per-class Dice, mean Dice.

    Classes absent from both prediction and ground truth are NaN per class and
    excluded from the means.
    """
    tp, fp, fn = _tp_fp_fn(cm)
    present = present_classes(cm)
    with np.errstate(divide="ignore", invalid="ignore"):
        iou = np.where(present, tp / (tp + fp + fn), np.nan)
        dice = np.where(present, 2 * tp / (2 * tp + fp + fn), np.nan)
    if not present.any():
        return iou, float("nan"), dice, float("nan")
    return iou, float(np.nanmean(iou)), dice, float(np.nanmean(dice))


def overall_accuracy(cm) -> float:
    cm = np.asarray(cm)
    total = cm.sum()
    if total == 0:
        raise EmptyReportError("overall accuracy is undefined for an empty confusion matrix")
    return float(np.trace(cm) / total)


def kappa(cm) -> float:
    """Cohen's kappa; defined as 0 when chance agreement is 1."""
    cm = np.asarray(cm, dtype=np.float64)
    total = cm.sum()
    if total == 0:
        raise EmptyReportError("kappa is undefined for an empty confusion matrix")
    po = np.trace(cm) / total
    pe = float((cm.sum(axis=1) * cm.sum(axis=0)).sum() / total ** 2)
    if pe >= 1.0:
        return 0.0
    return float((po - pe) / (1 - pe))


def precision_recall(cm):
    tp, fp, fn = _tp_fp_fn(cm)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(tp + fp > 0, tp / (tp + fp), np.nan)
        recall = np.where(tp + fn > 0, tp / (tp + fn), np.nan)
    return precision, recall


def coverage(cm):
    """Predicted and ground-truth class coverage in percent."""
    cm = np.asarray(cm, dtype=np.float64)
    total = cm.sum()
    return 100 * cm.sum(axis=0) / total, 100 * cm.sum(axis=1) / total


def gate_dominance(gates) -> tuple[float, float, float]:
    """``(rgb_dominance, sar_dominance, complementarity)`` from gating masks.

    ``gates`` is ``(2, H, W)`` or ``(B, 2, H, W)``; channel 0 is optical.
    Complementarity is the pixel mean of ``min(g1, g2) / max(g1, g2)``
    (0 where both gates are 0).
    """
    g = np.asarray(gates, dtype=np.float64)
    if g.ndim == 3:
        g = g[None]
    if g.ndim != 4 or g.shape[1] != 2:
        raise InvalidInputError(f"gates must be (B, 2, H, W), got {g.shape}")
    g1, g2 = g[:, 0], g[:, 1]
    m1, m2 = g1.mean(), g2.mean()
    rgb = 0.5 if m1 + m2 == 0 else float(m1 / (m1 + m2))
    hi = np.maximum(g1, g2)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(hi > 0, np.minimum(g1, g2) / hi, 0.0)
    return rgb, 1.0 - rgb, float(ratio.mean())


@dataclass
class GateStats:
    """Running sums over gating masks, mergeable across samples."""

    sum_g1: float = 0.0
    sum_g2: float = 0.0
    sum_ratio: float = 0.0
    pixels: int = 0

    def update(self, gates):
        g = np.asarray(gates, dtype=np.float64)
        if g.ndim == 3:
            g = g[None]
        g1, g2 = g[:, 0], g[:, 1]
        hi = np.maximum(g1, g2)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(hi > 0, np.minimum(g1, g2) / hi, 0.0)
        self.sum_g1 += float(g1.sum())
        self.sum_g2 += float(g2.sum())
        self.sum_ratio += float(ratio.sum())
        self.pixels += int(g1.size)
        return self

    def indicators(self) -> tuple[float, float, float] | None:
        if self.pixels == 0:
            return None
        tot = self.sum_g1 + self.sum_g2
        rgb = 0.5 if tot == 0 else self.sum_g1 / tot
        return rgb, 1.0 - rgb, self.sum_ratio / self.pixels


def _num(x):
    if x is None:
        return None
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_num(v) for v in x]
    x = float(x)
    return None if math.isnan(x) else x


@dataclass
class MetricsReport:
    per_class_iou: list
    miou: float
    per_class_dice: list
    mean_dice: float
    oa: float
    kappa: float
    per_class_coverage_pred: list
    per_class_coverage_gt: list
    per_class_signed_error: list
    detection_rate: list
    per_class_precision: list
    systematic_bias: float
    rgb_dominance: float | None = None
    sar_dominance: float | None = None
    complementarity: float | None = None
    fusion_quality: float | None = None
    sample_id: str | None = None
    class_names: list | None = None
    confusion: list | None = None
    metadata: dict = field(default_factory=dict)

    METRIC_FIELDS = ("per_class_iou", "miou", "per_class_dice", "mean_dice", "oa", "kappa",
                     "per_class_coverage_pred", "per_class_coverage_gt", "per_class_signed_error",
                     "detection_rate", "per_class_precision", "systematic_bias")
    FUSION_FIELDS = ("rgb_dominance", "sar_dominance", "complementarity", "fusion_quality")

    @property
    def num_classes(self) -> int:
        return len(self.per_class_iou)

    def present_fields(self) -> list[str]:
        return list(self.METRIC_FIELDS) + [f for f in self.FUSION_FIELDS if getattr(self, f) is not None]

    def to_dict(self) -> dict:
        return {f.name: _num(getattr(self, f.name)) if f.name in self.METRIC_FIELDS + self.FUSION_FIELDS
                else getattr(self, f.name) for f in fields(self)}

    def to_json(self, path=None, indent: int = 2) -> str:
        text = json.dumps(self.to_dict(), indent=indent)
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    @classmethod
    def from_json(cls, path) -> "MetricsReport":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def write_csv(self, path) -> None:
        names = self.class_names or [f"class_{i}" for i in range(self.num_classes)]
        cols = ("per_class_iou", "per_class_dice", "per_class_precision", "detection_rate",
                "per_class_coverage_pred", "per_class_coverage_gt", "per_class_signed_error")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("class",) + cols)
            for i, name in enumerate(names):
                w.writerow([name] + [_num(getattr(self, c)[i]) for c in cols])


def fusion_indicators(gates=None, cm=None, per_modality_oa=None, gate_stats: GateStats | None = None) -> dict:
    """Fusion fields of a report. Missing inputs leave the matching fields ``None``.

    ``per_modality_oa`` is ``(optical_only_oa, sar_only_oa)``; fusion quality is
    the fused OA minus the better single-modality OA.
    """
    out = dict.fromkeys(MetricsReport.FUSION_FIELDS)
    stats = gate_stats
    if stats is None and gates is not None:
        stats = GateStats().update(gates)
    ind = stats.indicators() if stats is not None else None
    if ind is not None:
        out["rgb_dominance"], out["sar_dominance"], out["complementarity"] = ind
    if per_modality_oa is not None and cm is not None:
        out["fusion_quality"] = overall_accuracy(cm) - max(per_modality_oa)
    return out


def build_report(cm, gates=None, per_modality_oa=None, class_names=None, sample_id=None,
                 gate_stats: GateStats | None = None, metadata=None) -> MetricsReport:
    cm = np.asarray(cm, dtype=np.int64)
    if cm.sum() == 0:
        raise EmptyReportError("cannot build a metrics report from an empty confusion matrix")
    iou, miou, dice, mdice = iou_dice(cm)
    precision, recall = precision_recall(cm)
    cov_pred, cov_gt = coverage(cm)
    signed = cov_pred - cov_gt
    fusion = fusion_indicators(gates, cm, per_modality_oa, gate_stats)
    return MetricsReport(
        per_class_iou=_num(iou), miou=miou, per_class_dice=_num(dice), mean_dice=mdice,
        oa=overall_accuracy(cm), kappa=kappa(cm),
        per_class_coverage_pred=_num(cov_pred), per_class_coverage_gt=_num(cov_gt),
        per_class_signed_error=_num(signed), detection_rate=_num(recall),
        per_class_precision=_num(precision), systematic_bias=float(np.abs(signed).max()),
        sample_id=sample_id, class_names=list(class_names) if class_names is not None else None,
        confusion=cm.tolist(), metadata=dict(metadata or {}), **fusion)

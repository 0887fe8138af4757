"""Evaluation: confusion-matrix accumulation, fusion indicators from the
gating masks, optional single-modality ablations and gate heatmap export."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..errors import EmptyReportError, InvalidInputError
from ..metrics import GateStats, MetricsReport, build_report, confusion_matrix, overall_accuracy
from ..network import predict_labels
from .synthetic import SampleSet
from .training import to_tensors


@dataclass
class EvaluationResult:
    report: MetricsReport
    sample_reports: list[MetricsReport] = field(default_factory=list)
    optical_only_oa: float | None = None
    sar_only_oa: float | None = None


def save_gate_png(gate: np.ndarray, path) -> None:
    """Write a ``[0, 1]`` mask as an 8-bit grayscale PNG."""
    from PIL import Image

    img = np.clip(np.rint(np.asarray(gate) * 255), 0, 255).astype(np.uint8)
    Image.fromarray(img, mode="L").save(path)


@torch.no_grad()
def _predict(model, opt, sar):
    logits, gates, _ = model.forward_with_aux(opt, sar)
    return predict_labels(logits).numpy(), gates.numpy()


@torch.no_grad()
def evaluate(model, data: SampleSet, batch_size: int = 8, dump_gates=None, modality_ablation=False,
             per_sample: bool = True, id_prefix: str = "sample") -> EvaluationResult:
    """Evaluate ``model`` on ``data``.

    With ``modality_ablation`` the same model is also run with the SAR input
    zeroed (optical-only) and with the optical input zeroed (SAR-only); their
    overall accuracies feed the fusion-quality field.
    """
    if len(data) == 0:
        raise EmptyReportError("cannot evaluate on an empty dataset")
    h, w = data.labels.shape[-2:]
    factor = 2 ** model.cfg.encoder.stages
    if h % factor or w % factor or data.num_classes != model.cfg.num_classes:
        raise InvalidInputError(f"data ({data.num_classes} classes, {h}x{w}) does not fit the model "
                                f"({model.cfg.num_classes} classes, multiples of {factor})")
    if data.optical.shape[1:] != (4, h, w) or data.sar.shape[1:] != (2, h, w):
        raise InvalidInputError(f"expected 4 optical and 2 SAR channels at {h}x{w}, got "
                                f"{data.optical.shape[1:]} and {data.sar.shape[1:]}")
    model.eval()
    n = data.num_classes
    names = data.class_names
    meta = {k: v for k, v in data.meta.items() if k == "cloud_fraction"}
    cm = np.zeros((n, n), dtype=np.int64)
    cm_opt = np.zeros_like(cm)
    cm_sar = np.zeros_like(cm)
    stats = GateStats()
    sample_reports = []
    if dump_gates is not None:
        dump_gates = Path(dump_gates)
        dump_gates.mkdir(parents=True, exist_ok=True)

    for start in range(0, len(data), batch_size):
        idx = np.arange(start, min(start + batch_size, len(data)))
        opt, sar, lab = to_tensors(data, idx)
        pred, gates = _predict(model, opt, sar)
        labels = lab.numpy()
        stats.update(gates)
        if modality_ablation:
            pred_o, _ = _predict(model, opt, torch.zeros_like(sar))
            pred_s, _ = _predict(model, torch.zeros_like(opt), sar)
        for j, k in enumerate(idx):
            c = confusion_matrix(pred[j], labels[j], n)
            cm += c
            per_oa = None
            if modality_ablation:
                co = confusion_matrix(pred_o[j], labels[j], n)
                cs = confusion_matrix(pred_s[j], labels[j], n)
                cm_opt += co
                cm_sar += cs
                per_oa = (overall_accuracy(co), overall_accuracy(cs))
            sid = f"{id_prefix}_{k:05d}"
            if per_sample:
                sample_reports.append(build_report(c, gates=gates[j], per_modality_oa=per_oa,
                                                   class_names=names, sample_id=sid, metadata=meta))
            if dump_gates is not None:
                save_gate_png(gates[j, 0], dump_gates / f"{sid}_optical_gate.png")
                save_gate_png(gates[j, 1], dump_gates / f"{sid}_sar_gate.png")

    result = EvaluationResult(report=None, sample_reports=sample_reports)
    per_oa = None
    if modality_ablation:
        result.optical_only_oa = overall_accuracy(cm_opt)
        result.sar_only_oa = overall_accuracy(cm_sar)
        per_oa = (result.optical_only_oa, result.sar_only_oa)
    result.report = build_report(cm, per_modality_oa=per_oa, class_names=names, sample_id="aggregate",
                                 gate_stats=stats, metadata=meta)
    return result

"""Desk-scale trend experiments on synthetic data.

Two comparisons are supported: rare-class IoU of one loss family against
another (class imbalance), and fused versus single-modality accuracy of one
checkpoint under cloud cover. Both use a narrow three-stage network so a
complete multi-seed run fits in minutes on one CPU core.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..losses import LossConfig
from ..model import ModelConfig
from ..network import EncoderConfig
from .config import TrainConfig
from .evaluation import evaluate
from .synthetic import SynthSpec, generate_synthetic
from .training import train

DESK_CHANNELS = [8, 16, 32]
DESK_EPOCHS = 15
DESK_LR = 3e-3
DESK_ROAD_WIDTH = 5.0


@dataclass
class TrendRun:
    seed: int
    family: str
    rare_iou: float
    miou: float
    oa: float
    optical_only_oa: float
    sar_only_oa: float
    best_epoch: int
    seconds: float


@dataclass
class TrendResult:
    runs: list[TrendRun] = field(default_factory=list)

    def mean(self, family: str, attr: str) -> float:
        vals = [getattr(r, attr) for r in self.runs if r.family == family]
        return float(np.mean(vals)) if vals else float("nan")


def desk_spec(seed: int, cloud_fraction: float = 0.0, patches: int = 300) -> SynthSpec:
    return SynthSpec(num_classes=4, patches=patches, patch_size=64, seed=seed,
                     cloud_fraction=cloud_fraction, road_width=DESK_ROAD_WIDTH,
                     stages=len(DESK_CHANNELS))


def desk_config(family: str, seed: int, epochs: int = DESK_EPOCHS, lr: float = DESK_LR,
                **loss_kwargs) -> TrainConfig:
    enc = EncoderConfig(stage_channels=list(DESK_CHANNELS), se_reduction=4)
    return TrainConfig(lr=lr, epochs=epochs, seed=seed, loss=LossConfig(family, **loss_kwargs),
                       model=ModelConfig(num_classes=4, encoder=enc))


def run_trend(families, seeds, cloud_fraction: float = 0.0, epochs: int = DESK_EPOCHS,
              patches: int = 300, progress=None) -> TrendResult:
    """Train each family on each seed's synthetic set and evaluate the test split
    with modality ablation."""
    result = TrendResult()
    for seed in seeds:
        train_set, val_set, test_set = generate_synthetic(desk_spec(seed, cloud_fraction, patches))
        for fam in families:
            t0 = time.perf_counter()
            model, tlog, _ = train(desk_config(fam, seed, epochs), train_set, val_set)
            res = evaluate(model, test_set, modality_ablation=True, per_sample=False)
            rep = res.report
            run = TrendRun(seed=seed, family=fam, rare_iou=rep.per_class_iou[-1] or 0.0,
                           miou=rep.miou, oa=rep.oa, optical_only_oa=res.optical_only_oa,
                           sar_only_oa=res.sar_only_oa, best_epoch=tlog.best_epoch,
                           seconds=time.perf_counter() - t0)
            result.runs.append(run)
            if progress is not None:
                progress(run)
    return result

"""Training loop: AdamW, reduce-on-plateau on validation loss, and
best-validation-Dice checkpoint selection."""

from __future__ import annotations

import copy
import logging
import math
import random
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch

from ..errors import ConfigError, InvalidInputError, NumericalError
from ..losses import WEIGHTED_FAMILIES, class_weights_inverse_frequency, compute_loss
from ..metrics import confusion_matrix, iou_dice
from ..model import ClaireNet, build_model
from ..network import predict_labels
from .checkpoint import save_checkpoint
from .config import TrainConfig
from .synthetic import SampleSet

log = logging.getLogger(__name__)

CHECKPOINT_NAME = "best.ckpt"


@dataclass
class TrainingLog:
    epochs: list[dict] = field(default_factory=list)
    best_val_dice: float = -math.inf
    best_epoch: int = -1
    steps: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def learning_rates(self) -> list[float]:
        return [e["lr"] for e in self.epochs]


def seed_everything(seed: int, deterministic: bool = True, num_threads: int | None = 1) -> None:
    random.seed(seed)
    np.random.seed(seed % 2 ** 32)
    torch.manual_seed(seed)
    if num_threads:
        torch.set_num_threads(num_threads)
    torch.use_deterministic_algorithms(deterministic, warn_only=True)


def to_tensors(data: SampleSet, idx=None):
    sl = slice(None) if idx is None else idx
    return (torch.from_numpy(np.ascontiguousarray(data.optical[sl])),
            torch.from_numpy(np.ascontiguousarray(data.sar[sl])),
            torch.from_numpy(np.ascontiguousarray(data.labels[sl])))


def _batches(n: int, batch_size: int, rng: np.random.Generator | None):
    order = np.arange(n) if rng is None else rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def _mean_dice_iou(cm):
    iou, miou, dice, mdice = iou_dice(cm)
    return (0.0 if math.isnan(mdice) else mdice), (0.0 if math.isnan(miou) else miou)


@torch.no_grad()
def validation_pass(model: ClaireNet, data: SampleSet, loss_cfg, batch_size: int = 8):
    model.eval()
    total, count = 0.0, 0
    cm = np.zeros((data.num_classes,) * 2, dtype=np.int64)
    for idx in _batches(len(data), batch_size, None):
        opt, sar, lab = to_tensors(data, idx)
        logits = model(opt, sar)
        total += float(compute_loss(logits, lab, loss_cfg)) * len(idx)
        count += len(idx)
        cm += confusion_matrix(predict_labels(logits).numpy(), lab.numpy(), data.num_classes)
    dice, iou = _mean_dice_iou(cm)
    return total / max(count, 1), dice, iou


def train(cfg: TrainConfig, train_data: SampleSet, val_data: SampleSet | None = None, model=None,
          progress=None):
    """Train a model; returns ``(model, log, checkpoint_path_or_None)``.

    The returned model holds the weights of the best-validation-Dice epoch.
    Without ``val_data`` the training set doubles as validation set.
    """
    if len(train_data) == 0:
        raise InvalidInputError("training set is empty")
    if train_data.num_classes != cfg.model.num_classes:
        raise ConfigError(f"data has {train_data.num_classes} classes, model expects "
                          f"{cfg.model.num_classes}")
    factor = 2 ** cfg.model.encoder.stages
    if train_data.labels.shape[-1] % factor:
        raise ConfigError(f"patch size {train_data.labels.shape[-1]} is not divisible by {factor}")
    val_data = train_data if val_data is None or len(val_data) == 0 else val_data

    seed_everything(cfg.seed, cfg.deterministic, cfg.num_threads)
    loss_cfg = copy.deepcopy(cfg.loss)
    if loss_cfg.family in WEIGHTED_FAMILIES and loss_cfg.class_weights is None:
        loss_cfg.class_weights = class_weights_inverse_frequency(train_data.class_counts()).tolist()

    model = build_model(cfg.model, seed=cfg.seed) if model is None else model
    opt = torch.optim.AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay,
                            betas=(0.9, 0.999), eps=1e-8)
    sched = torch.optim.lr_scheduler.ReduceLROnPlateau(opt, mode="min", factor=cfg.plateau_factor,
                                                       patience=cfg.plateau_patience)
    rng = np.random.default_rng(cfg.seed)
    ckpt_path = Path(cfg.checkpoint_dir) / CHECKPOINT_NAME if cfg.checkpoint_dir else None
    tlog = TrainingLog()
    best_state = None
    config_dict = cfg.to_dict()
    config_dict["loss"] = loss_cfg.to_dict()

    for epoch in range(cfg.epochs):
        model.train()
        running, seen = 0.0, 0
        cm = np.zeros((train_data.num_classes,) * 2, dtype=np.int64)
        for b, idx in enumerate(_batches(len(train_data), cfg.batch_size, rng)):
            o, s, y = to_tensors(train_data, idx)
            logits = model(o, s)
            loss = compute_loss(logits, y, loss_cfg)
            if not torch.isfinite(loss):
                raise NumericalError(f"non-finite {loss_cfg.family} loss ({float(loss.detach())}) at "
                                     f"epoch {epoch} batch {b}")
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            tlog.steps += 1
            running += float(loss.detach()) * len(idx)
            seen += len(idx)
            cm += confusion_matrix(predict_labels(logits.detach()).numpy(), y.numpy(),
                                   train_data.num_classes)
            if cfg.max_steps is not None and tlog.steps >= cfg.max_steps:
                break
        train_dice, train_iou = _mean_dice_iou(cm)
        val_loss, val_dice, val_iou = validation_pass(model, val_data, loss_cfg, cfg.batch_size)
        lr = opt.param_groups[0]["lr"]
        sched.step(val_loss)
        tlog.epochs.append({"epoch": epoch, "train_loss": running / seen, "train_dice": train_dice,
                            "train_iou": train_iou, "val_loss": val_loss, "val_dice": val_dice,
                            "val_iou": val_iou, "lr": lr})
        if val_dice > tlog.best_val_dice:
            tlog.best_val_dice, tlog.best_epoch = val_dice, epoch
            best_state = copy.deepcopy(model.state_dict())
            if ckpt_path is not None:
                save_checkpoint(ckpt_path, model, config_dict, epoch, val_dice)
        if progress is not None:
            progress(tlog.epochs[-1])
        log.debug("epoch %d train_loss %.4f val_loss %.4f val_dice %.4f", epoch,
                 running / seen, val_loss, val_dice)
        if cfg.max_steps is not None and tlog.steps >= cfg.max_steps:
            break

    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    return model, tlog, ckpt_path

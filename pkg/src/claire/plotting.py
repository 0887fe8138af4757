"""Figures: per-class IoU bars, training curves and gate heatmaps."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .metrics import MetricsReport


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_iou(report: MetricsReport, path) -> Path:
    plt = _pyplot()
    names = report.class_names or [f"class_{i}" for i in range(report.num_classes)]
    vals = [np.nan if v is None else v for v in report.per_class_iou]
    fig, ax = plt.subplots(figsize=(1.2 * len(names) + 2, 3.5))
    ax.bar(names, vals, color="tab:blue")
    ax.set_ylim(0, 1)
    ax.set_ylabel("IoU")
    ax.set_title(f"mIoU {report.miou:.3f}  OA {report.oa:.3f}")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)


def plot_training(log: dict, path) -> Path:
    plt = _pyplot()
    epochs = [e["epoch"] for e in log["epochs"]]
    fig, (a, b) = plt.subplots(1, 2, figsize=(9, 3.5))
    a.plot(epochs, [e["train_loss"] for e in log["epochs"]], label="train")
    a.plot(epochs, [e["val_loss"] for e in log["epochs"]], label="val")
    a.set_xlabel("epoch")
    a.set_ylabel("loss")
    a.legend()
    b.plot(epochs, [e["train_dice"] for e in log["epochs"]], label="train Dice")
    b.plot(epochs, [e["val_dice"] for e in log["epochs"]], label="val Dice")
    b.plot(epochs, [e["val_iou"] for e in log["epochs"]], label="val IoU")
    b.set_xlabel("epoch")
    b.set_ylim(0, 1)
    b.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)


def plot_gates(gate_dir, path, limit: int = 6) -> Path:
    """Side-by-side optical/SAR gate maps for the first ``limit`` dumped samples."""
    from PIL import Image

    plt = _pyplot()
    gate_dir = Path(gate_dir)
    opt = sorted(gate_dir.glob("*_optical_gate.png"))[:limit]
    if not opt:
        raise FileNotFoundError(f"no gate maps found in {gate_dir}")
    fig, axes = plt.subplots(len(opt), 2, figsize=(5, 2.4 * len(opt)), squeeze=False)
    for row, p in zip(axes, opt):
        sar = p.with_name(p.name.replace("_optical_gate", "_sar_gate"))
        for ax, f, title in ((row[0], p, "optical gate"), (row[1], sar, "SAR gate")):
            ax.imshow(np.asarray(Image.open(f)) / 255.0, vmin=0, vmax=1, cmap="viridis")
            ax.set_title(f"{p.name.split('_optical')[0]}: {title}", fontsize=8)
            ax.axis("off")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)

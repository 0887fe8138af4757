"""Procedural optical/SAR/label scenes for desk-scale experiments.

Label maps combine smooth blob classes with thin polylines for the last
(structurally rare) class. Optical bands carry class colours plus noise and
optional cloud occlusion; the SAR band carries class backscatter with
multiplicative gamma speckle and is never clouded. Every scene goes through
:func:`claire.preprocess.extract_samples`, so samples look exactly like
preprocessed real data.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from scipy import ndimage

from ..errors import ConfigError
from ..preprocess import RawScene, Sample, extract_samples

# R, G, B, NIR reflectance and SAR backscatter for the first classes.
# Roads (last class) share tones with built-up areas optically and are dark in SAR.
_PALETTE = {
    "vegetation": ((0.15, 0.42, 0.12, 0.62), 0.35),
    "built-up": ((0.52, 0.48, 0.46, 0.34), 0.95),
    "water": ((0.08, 0.16, 0.32, 0.05), 0.05),
    "farmland": ((0.40, 0.46, 0.22, 0.45), 0.22),
    "bareland": ((0.58, 0.50, 0.38, 0.40), 0.15),
    "forest": ((0.10, 0.30, 0.10, 0.55), 0.55),
}
_ROAD = ((0.44, 0.43, 0.44, 0.30), 0.07)


def default_class_names(num_classes: int) -> list[str]:
    base = list(_PALETTE)[: num_classes - 1]
    base += [f"class_{i}" for i in range(len(base), num_classes - 1)]
    return base + ["road"]


def _signatures(num_classes: int):
    rng = np.random.default_rng(1234)
    sigs = []
    for name in default_class_names(num_classes)[:-1]:
        if name in _PALETTE:
            sigs.append(_PALETTE[name])
        else:
            sigs.append((tuple(rng.uniform(0.05, 0.6, 4)), float(rng.uniform(0.05, 1.0))))
    sigs.append(_ROAD)
    colours = np.array([s[0] for s in sigs])
    backscatter = np.array([s[1] for s in sigs])
    return colours, backscatter


@dataclass
class SynthSpec:
    num_classes: int = 4
    patches: int = 300
    patch_size: int = 64
    class_proportions: list[float] = field(default_factory=lambda: [0.47, 0.32, 0.18, 0.03])
    cloud_fraction: float = 0.0
    speckle_level: float = 0.5  # coefficient of variation of the speckle
    seed: int = 0
    road_width: float = 2.0
    optical_noise: float = 0.06
    stages: int = 4

    def __post_init__(self):
        self.class_proportions = [float(p) for p in self.class_proportions]
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if len(self.class_proportions) != self.num_classes:
            raise ConfigError(f"{len(self.class_proportions)} proportions for {self.num_classes} classes")
        if min(self.class_proportions) < 0 or abs(sum(self.class_proportions) - 1) > 1e-6:
            raise ConfigError("class proportions must be non-negative and sum to 1")
        if self.class_proportions[-1] > 0.5:
            raise ConfigError("the rare polyline class cannot exceed half of the pixels")
        if sum(self.class_proportions[:-1]) <= 0:
            raise ConfigError("at least one blob class needs a positive proportion")
        if not 0 <= self.cloud_fraction <= 1:
            raise ConfigError("cloud_fraction must lie in [0, 1]")
        if self.speckle_level < 0:
            raise ConfigError("speckle_level must be non-negative")
        if self.patches < 1:
            raise ConfigError("patches must be >= 1")
        if self.patch_size % (2 ** self.stages):
            raise ConfigError(f"patch_size {self.patch_size} is not divisible by 2^{self.stages}")

    def to_dict(self) -> dict:
        return asdict(self)


def _smooth_field(rng, size, sigma):
    return ndimage.gaussian_filter(rng.standard_normal((size, size)), sigma, mode="wrap")


def _polyline_mask(rng, size, width):
    """A gently curving road entering at one border and leaving at the opposite one."""
    n = 6
    t = np.linspace(0, size - 1, n)
    offset = rng.uniform(0.15, 0.85) * size
    wobble = np.cumsum(rng.normal(0, size * 0.08, n))
    cross = np.clip(offset + wobble - wobble.mean(), 0, size - 1)
    pts = np.stack([t, cross], axis=1)
    if rng.random() < 0.5:
        pts = pts[:, ::-1]
    yy, xx = np.mgrid[:size, :size]
    grid = np.stack([yy.ravel(), xx.ravel()], axis=1).astype(float)
    dist = np.full(grid.shape[0], np.inf)
    for a, b in zip(pts[:-1], pts[1:]):
        ab = b - a
        u = np.clip(((grid - a) @ ab) / (ab @ ab), 0, 1)
        dist = np.minimum(dist, np.linalg.norm(grid - (a + u[:, None] * ab), axis=1))
    return (dist <= width / 2).reshape(size, size)


def _label_map(rng, spec: SynthSpec, road_budget: float):
    """Blob classes assigned by quantiles of a smooth field, plus roads.

    ``road_budget`` is the number of road pixels still owed to keep the
    running rare-class frequency on target.
    """
    size, n = spec.patch_size, spec.num_classes
    road = np.zeros((size, size), dtype=bool)
    for _ in range(64):
        if road.sum() >= road_budget - 0.5 * size * spec.road_width or spec.class_proportions[-1] == 0:
            break
        road |= _polyline_mask(rng, size, spec.road_width)
    label = np.empty((size, size), dtype=np.int64)
    label[road] = n - 1

    blob_p = np.asarray(spec.class_proportions[:-1])
    blob_p = blob_p / blob_p.sum()
    order = rng.permutation(n - 1)
    f = _smooth_field(rng, size, sigma=size / 10)[~road]
    rank = np.empty(f.size, dtype=np.int64)
    rank[np.argsort(f, kind="stable")] = np.arange(f.size)
    edges = np.round(np.cumsum(blob_p[order]) * f.size).astype(int)
    label[~road] = order[np.searchsorted(edges, rank, side="right").clip(0, n - 2)]
    return label


def generate_scene(rng, spec: SynthSpec, road_budget: float):
    size = spec.patch_size
    # clouds draw from their own stream so labels and SAR do not depend on cloud_fraction
    cloud_rng = np.random.default_rng(int(rng.integers(2 ** 63)))
    label = _label_map(rng, spec, road_budget)
    colours, backscatter = _signatures(spec.num_classes)

    shade = 1 + 0.15 * _smooth_field(rng, size, size / 6)
    optical = colours[label].transpose(2, 0, 1) * shade
    optical = optical + rng.normal(0, spec.optical_noise, optical.shape)
    cloud = np.zeros((size, size), dtype=bool)
    if spec.cloud_fraction > 0:
        c = _smooth_field(cloud_rng, size, size / 8)
        cloud = c >= np.quantile(c, 1 - spec.cloud_fraction)
        haze = 0.85 + 0.03 * cloud_rng.standard_normal((4, size, size))
        optical = np.where(cloud[None], haze, optical)
    optical = np.clip(optical, 0, 1)

    sar = backscatter[label]
    if spec.speckle_level > 0:
        looks = 1.0 / spec.speckle_level ** 2
        sar = sar * rng.gamma(looks, 1.0 / looks, sar.shape)
    return RawScene(optical=optical, sar=sar, label=label), cloud


@dataclass
class SampleSet:
    """Stacked samples: optical ``(n,4,P,P)``, sar ``(n,2,P,P)``, labels ``(n,P,P)``."""

    optical: np.ndarray
    sar: np.ndarray
    labels: np.ndarray
    num_classes: int
    class_names: list[str] | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return int(self.labels.shape[0])

    @classmethod
    def from_samples(cls, samples: list[Sample], num_classes: int, class_names=None, meta=None):
        if not samples:
            p = 0
            return cls(np.zeros((0, 4, p, p), np.float32), np.zeros((0, 2, p, p), np.float32),
                       np.zeros((0, p, p), np.int64), num_classes, class_names, dict(meta or {}))
        return cls(np.stack([s.optical for s in samples]).astype(np.float32),
                   np.stack([s.sar for s in samples]).astype(np.float32),
                   np.stack([s.label for s in samples]).astype(np.int64),
                   num_classes, class_names, dict(meta or {}))

    def subset(self, idx) -> "SampleSet":
        idx = np.asarray(idx, dtype=np.int64)
        return SampleSet(self.optical[idx], self.sar[idx], self.labels[idx], self.num_classes,
                         self.class_names, dict(self.meta))

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels.ravel(), minlength=self.num_classes)

    def save(self, path):
        np.savez_compressed(path, optical=self.optical, sar=self.sar, labels=self.labels,
                            num_classes=self.num_classes,
                            class_names=np.asarray(self.class_names or [], dtype=str),
                            cloud_fraction=self.meta.get("cloud_fraction", np.nan))

    @classmethod
    def load(cls, path) -> "SampleSet":
        with np.load(path) as z:
            names = [str(s) for s in z["class_names"]] or None
            meta = {}
            cf = float(z["cloud_fraction"]) if "cloud_fraction" in z else float("nan")
            if not np.isnan(cf):
                meta["cloud_fraction"] = cf
            return cls(z["optical"], z["sar"], z["labels"], int(z["num_classes"]), names, meta)


def split_indices(n: int, ratios=(0.8, 0.1, 0.1)):
    """Contiguous 80:10:10-style split; train gets the rounding remainder."""
    n_val = int(round(n * ratios[1]))
    n_test = int(round(n * ratios[2]))
    n_train = n - n_val - n_test
    idx = np.arange(n)
    return idx[:n_train], idx[n_train:n_train + n_val], idx[n_train + n_val:]


def generate_synthetic(spec: SynthSpec):
    """Returns ``(train, val, test)`` :class:`SampleSet` objects, deterministic in ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    samples = []
    rare_target = spec.class_proportions[-1]
    rare_pixels = 0
    pixels = 0
    for _ in range(spec.patches):
        pixels += spec.patch_size ** 2
        scene, cloud = generate_scene(rng, spec, rare_target * pixels - rare_pixels)
        sample = extract_samples(scene, spec.patch_size, spec.num_classes, "NDVI")[0]
        sample.meta["cloud_pixels"] = int(cloud.sum())
        rare_pixels += int((sample.label == spec.num_classes - 1).sum())
        samples.append(sample)
    names = default_class_names(spec.num_classes)
    full = SampleSet.from_samples(samples, spec.num_classes, names, {"cloud_fraction": spec.cloud_fraction})
    return tuple(full.subset(i) for i in split_indices(len(full)))


def save_splits(splits, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, s in zip(("train", "val", "test"), splits):
        p = out_dir / f"{name}.npz"
        s.save(p)
        paths.append(p)
    return paths

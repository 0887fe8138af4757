"""Optical/SAR scene preprocessing: despeckling, log backscatter, vegetation
indices, normalization, label cleanup and patch extraction.

All functions are pure and operate on numpy arrays. Band-stacked rasters are
channel-first (``C x H x W``).
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from scipy import ndimage

from .errors import ConfigError, InvalidInputError

log = logging.getLogger(__name__)

EPS = 1e-6
NDVI = "NDVI"
VARI = "VARI"


class SceneTooSmallWarning(UserWarning):
    pass


@dataclass
class RawScene:
    optical: np.ndarray  # (3|4, H, W): R, G, B[, NIR]
    sar: np.ndarray  # (H, W) or (1, H, W)
    label: np.ndarray  # (H, W) integer

    def __post_init__(self):
        self.optical = np.asarray(self.optical, dtype=np.float64)
        sar = np.asarray(self.sar, dtype=np.float64)
        if sar.ndim == 3:
            if sar.shape[0] != 1:
                raise InvalidInputError(f"SAR raster must have one band, got {sar.shape[0]}")
            sar = sar[0]
        self.sar = sar
        self.label = np.asarray(self.label)
        if self.optical.ndim != 3 or self.optical.shape[0] not in (3, 4):
            raise InvalidInputError(f"optical raster must be (3|4, H, W), got {self.optical.shape}")
        if self.sar.shape != self.optical.shape[1:]:
            raise InvalidInputError(
                f"SAR shape {self.sar.shape} does not match optical {self.optical.shape[1:]}")
        if self.label.ndim != 2:
            raise InvalidInputError(f"label must be 2-D, got shape {self.label.shape}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.optical.shape[1], self.optical.shape[2]


@dataclass
class Sample:
    optical: np.ndarray  # (4, P, P) float32 in [0, 1]: R, G, B, vegetation index
    sar: np.ndarray  # (2, P, P) float32: filtered intensity, log10 backscatter
    label: np.ndarray  # (P, P) int64 in [0, N-1]
    origin: tuple[int, int] = (0, 0)
    meta: dict = field(default_factory=dict)

    @property
    def patch_size(self) -> int:
        return self.label.shape[0]

    def save(self, path):
        np.savez_compressed(path, optical=self.optical, sar=self.sar, label=self.label,
                            origin=np.asarray(self.origin), meta=json.dumps(self.meta))

    @classmethod
    def load(cls, path) -> "Sample":
        with np.load(path) as z:
            return cls(optical=z["optical"], sar=z["sar"], label=z["label"],
                       origin=tuple(int(v) for v in z["origin"]),
                       meta=json.loads(str(z["meta"])))


def _check_2d(name, a):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.size == 0:
        raise InvalidInputError(f"{name} must be a non-empty 2-D array, got shape {a.shape}")
    return a


def _check_same_shape(**arrays):
    shapes = {k: np.shape(v) for k, v in arrays.items()}
    if len(set(shapes.values())) != 1:
        raise InvalidInputError(f"shape mismatch: {shapes}")


def sanitize(a: np.ndarray) -> np.ndarray:
    """Replace NaN and +/-Inf with 0."""
    return np.nan_to_num(np.asarray(a, dtype=np.float64), nan=0.0, posinf=0.0, neginf=0.0)


def median_filter3(image: np.ndarray) -> np.ndarray:
    """3x3 median filter with replicate ("nearest") edge padding."""
    image = _check_2d("image", image)
    return ndimage.median_filter(image, size=3, mode="nearest")


def log_backscatter(sar: np.ndarray, eps: float = EPS) -> np.ndarray:
    """``log10(sar + eps)``; negative intensities are clamped to 0 first."""
    if eps <= 0:
        raise ConfigError("eps must be positive")
    sar = np.clip(sanitize(sar), 0.0, None)
    return np.log10(sar + eps)


def ndvi(nir: np.ndarray, red: np.ndarray, eps: float = EPS) -> np.ndarray:
    nir = np.asarray(nir, dtype=np.float64)
    red = np.asarray(red, dtype=np.float64)
    _check_same_shape(nir=nir, red=red)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (nir - red) / (nir + red + eps)
    return sanitize(out)


def vari(r: np.ndarray, g: np.ndarray, b: np.ndarray, eps: float = EPS) -> np.ndarray:
    """Visible atmospherically resistant index, clamped to [-1, 1].

    The raw ratio is unbounded where ``G + R ~= B``, hence the clamp.
    """
    r, g, b = (np.asarray(x, dtype=np.float64) for x in (r, g, b))
    _check_same_shape(r=r, g=g, b=b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (g - r) / (g + r - b + eps)
    out = np.where(np.isnan(out), 0.0, out)
    return np.clip(out, -1.0, 1.0)


def normalize01(channel: np.ndarray) -> np.ndarray:
    """Min-max scale to [0, 1]; a constant channel maps to zeros."""
    channel = sanitize(channel)
    lo, hi = channel.min(), channel.max()
    if hi - lo <= 0:
        return np.zeros_like(channel)
    return (channel - lo) / (hi - lo)


def resize_nearest(label: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbour resize using pixel-centre sampling."""
    h, w = label.shape
    th, tw = target
    rows = np.minimum(((np.arange(th) + 0.5) * h / th).astype(int), h - 1)
    cols = np.minimum(((np.arange(tw) + 0.5) * w / tw).astype(int), w - 1)
    return label[np.ix_(rows, cols)]


def prepare_labels(label: np.ndarray, num_classes: int, target: int | tuple[int, int]) -> np.ndarray:
    """Clamp class ids to ``[0, num_classes-1]`` and resize to ``target``."""
    if num_classes < 2:
        raise ConfigError(f"num_classes must be >= 2, got {num_classes}")
    label = np.asarray(label)
    if label.ndim != 2:
        raise InvalidInputError(f"label must be 2-D, got shape {label.shape}")
    if np.issubdtype(label.dtype, np.floating):
        if not np.all(np.isfinite(label)):
            raise InvalidInputError("label contains non-finite values")
        label = np.rint(label)
    label = np.clip(label.astype(np.int64), 0, num_classes - 1)
    if isinstance(target, int):
        target = (target, target)
    if label.shape != tuple(target):
        label = resize_nearest(label, target)
    return label


def patch_offsets(height: int, width: int, patch: int) -> list[tuple[int, int]]:
    """Top-left corners of the non-overlapping tiling; the remainder is dropped."""
    return [(i * patch, j * patch) for i in range(height // patch) for j in range(width // patch)]


def vegetation_mode(scene: RawScene) -> str:
    return NDVI if scene.optical.shape[0] == 4 else VARI


def extract_samples(scene: RawScene, patch_size: int = 256, num_classes: int = 8,
                    dataset_mode: str | None = None, eps: float = EPS) -> list[Sample]:
    """Turn a co-registered scene into aligned, normalized patches.

    ``dataset_mode`` defaults to NDVI for four-band optical input and VARI for
    three-band input. Requesting NDVI on a scene without a NIR band is an error.
    """
    mode = (dataset_mode or vegetation_mode(scene)).upper()
    if mode not in (NDVI, VARI):
        raise ConfigError(f"unknown vegetation index mode {dataset_mode!r}")
    if mode == NDVI and scene.optical.shape[0] < 4:
        raise ConfigError("NDVI requires a NIR band (4-band optical input)")
    if patch_size < 1:
        raise ConfigError("patch_size must be positive")

    h, w = scene.shape
    if h < patch_size or w < patch_size:
        warnings.warn(f"scene {h}x{w} is smaller than patch size {patch_size}; no samples",
                      SceneTooSmallWarning, stacklevel=2)
        return []

    optical = sanitize(scene.optical)
    red, green, blue = optical[0], optical[1], optical[2]
    if mode == NDVI:
        index = ndvi(np.clip(optical[3], 0, None), np.clip(red, 0, None), eps)
    else:
        index = vari(red, green, blue, eps)
    bands = np.stack([red, green, blue, index])

    intensity = median_filter3(np.clip(sanitize(scene.sar), 0.0, None))
    sar = np.stack([intensity, log_backscatter(intensity, eps)])

    label = prepare_labels(scene.label, num_classes, (h, w))

    samples = []
    for r0, c0 in patch_offsets(h, w, patch_size):
        win = np.s_[r0:r0 + patch_size, c0:c0 + patch_size]
        opt = np.stack([normalize01(b[win]) for b in bands]).astype(np.float32)
        samples.append(Sample(optical=opt, sar=sar[(slice(None),) + win].astype(np.float32),
                              label=label[win].astype(np.int64), origin=(r0, c0),
                              meta={"vegetation_index": mode}))
    return samples


# -- raster / manifest I/O -------------------------------------------------

def load_raster(path) -> np.ndarray:
    """Read ``.npy`` or an image file (PNG/TIFF via Pillow) as a channel-first array."""
    path = Path(path)
    if path.suffix == ".npy":
        return np.load(path)
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im)
    if arr.ndim == 3:
        arr = np.moveaxis(arr, -1, 0)
    return arr


def read_manifest(path) -> list[dict]:
    path = Path(path)
    records = json.loads(path.read_text())
    if isinstance(records, dict):
        records = records.get("records", [])
    required = {"optical_path", "sar_path", "label_path", "num_classes"}
    for i, rec in enumerate(records):
        missing = required - rec.keys()
        if missing:
            raise ConfigError(f"manifest record {i} is missing {sorted(missing)}")
        for key in ("optical_path", "sar_path", "label_path"):
            p = Path(rec[key])
            if not p.is_absolute():
                rec[key] = str(path.parent / p)
    return records


def iter_manifest_samples(records: Sequence[dict], patch_size: int) -> Iterator[tuple[int, Sample]]:
    for i, rec in enumerate(records):
        scene = RawScene(optical=load_raster(rec["optical_path"]),
                         sar=load_raster(rec["sar_path"]),
                         label=load_raster(rec["label_path"]))
        mode = rec.get("mode")
        for s in extract_samples(scene, patch_size, int(rec["num_classes"]), mode):
            yield i, s


def preprocess_manifest(manifest, out_dir, patch_size: int = 256) -> Path:
    """Write one ``.npz`` per patch plus ``index.json``; returns the index path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    index = []
    records = read_manifest(manifest)
    for k, (rec_id, sample) in enumerate(iter_manifest_samples(records, patch_size)):
        name = f"sample_{k:06d}.npz"
        sample.save(out_dir / name)
        index.append({"file": name, "record": rec_id, "origin": list(sample.origin),
                      "num_classes": int(records[rec_id]["num_classes"]),
                      "vegetation_index": sample.meta["vegetation_index"]})
    path = out_dir / "index.json"
    path.write_text(json.dumps({"patch_size": patch_size, "samples": index}, indent=2))
    log.info("wrote %d samples to %s", len(index), out_dir)
    return path

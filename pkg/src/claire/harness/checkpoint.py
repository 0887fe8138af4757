"""Named-tensor checkpoint archive.

Layout: 8-byte magic ``CLAIRE01``, little-endian uint64 header length, a UTF-8
JSON header, then raw little-endian tensor bytes. The header holds
``config``, ``epoch``, ``best_val_dice`` and ``tensors`` (name -> dtype,
shape, offset, nbytes relative to the start of the data section). Reading
needs only numpy.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"CLAIRE01"


def save_tensors(path, tensors: dict, header: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta, blobs, offset = {}, [], 0
    for name, t in tensors.items():
        a = np.asarray(t.detach().cpu().numpy() if hasattr(t, "detach") else t)
        a = np.ascontiguousarray(a.astype(a.dtype.newbyteorder("<")))
        raw = a.tobytes()
        meta[name] = {"dtype": a.dtype.name, "shape": list(a.shape), "offset": offset, "nbytes": len(raw)}
        blobs.append(raw)
        offset += len(raw)
    head = json.dumps({**(header or {}), "tensors": meta}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        for raw in blobs:
            fh.write(raw)
    return path


def load_tensors(path) -> tuple[dict, dict]:
    """Returns ``(header, {name: ndarray})``."""
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ValueError(f"{path} is not a checkpoint archive")
    (n,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16:16 + n])
    base = 16 + n
    tensors = {}
    for name, m in header.pop("tensors").items():
        start = base + m["offset"]
        dt = np.dtype(m["dtype"]).newbyteorder("<")
        tensors[name] = np.frombuffer(data[start:start + m["nbytes"]], dtype=dt).reshape(m["shape"]).copy()
    return header, tensors


def save_checkpoint(path, model, config: dict, epoch: int, best_val_dice: float) -> Path:
    header = {"config": config, "epoch": int(epoch), "best_val_dice": float(best_val_dice)}
    return save_tensors(path, model.state_dict(), header)


def load_checkpoint(path, dtype=None):
    """Rebuild the model stored at ``path``; returns ``(model, header)``."""
    import torch

    from ..model import ClaireNet, ModelConfig

    header, tensors = load_tensors(path)
    model = ClaireNet(ModelConfig.from_dict(header["config"]["model"]))
    state = {k: torch.from_numpy(v) for k, v in tensors.items()}
    if dtype is not None:
        model = model.to(dtype)
    model.load_state_dict(state)
    model.eval()
    return model, header

"""Dual-encoder segmentation network: optical and SAR encoders, CMAF bottleneck, decoder."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import torch
import torch.nn as nn

from .cmaf import CMAF
from .errors import ConfigError
from .network import Decoder, Encoder, EncoderConfig

OPTICAL_CHANNELS = 4
SAR_CHANNELS = 2


@dataclass
class ModelConfig:
    num_classes: int = 8
    encoder: EncoderConfig = field(default_factory=EncoderConfig)

    def __post_init__(self):
        if isinstance(self.encoder, dict):
            self.encoder = EncoderConfig(**self.encoder)
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(num_classes=d["num_classes"], encoder=EncoderConfig(**d["encoder"]))


class ClaireNet(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        enc = cfg.encoder
        self.optical_encoder = Encoder(OPTICAL_CHANNELS, enc)
        self.sar_encoder = Encoder(SAR_CHANNELS, enc)
        self.cmaf = CMAF(enc.stage_channels[-1], enc.se_reduction)
        self.decoder = Decoder(enc.stage_channels[-1], cfg.num_classes, enc)

    def forward_with_aux(self, optical, sar, force_gates=None):
        """Returns ``(logits, gates, cmaf_state)``."""
        f_o = self.optical_encoder(optical)[-1]
        f_s = self.sar_encoder(sar)[-1]
        fused, gates, state = self.cmaf(f_o, f_s, force_gates=force_gates)
        return self.decoder(fused), gates, state

    def forward(self, optical, sar):
        return self.forward_with_aux(optical, sar)[0]


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def build_model(cfg: ModelConfig, seed: int | None = None, dtype=torch.float32) -> ClaireNet:
    if seed is not None:
        torch.manual_seed(seed)
    return ClaireNet(cfg).to(dtype)

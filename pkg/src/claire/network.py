"""Modality-specific residual encoders with squeeze-excitation, and the
progressive bilinear decoder with segmentation head."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, InvalidInputError


@dataclass
class EncoderConfig:
    stage_channels: list[int] = field(default_factory=lambda: [32, 64, 128, 256])
    se_reduction: int = 16
    dropout_rate: float = 0.1

    def __post_init__(self):
        self.stage_channels = [int(c) for c in self.stage_channels]
        if not self.stage_channels or min(self.stage_channels) < 1:
            raise ConfigError("stage_channels must be a non-empty list of positive ints")
        if self.se_reduction < 1:
            raise ConfigError("se_reduction must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must lie in [0, 1)")

    @property
    def stages(self) -> int:
        return len(self.stage_channels)

    def to_dict(self) -> dict:
        return asdict(self)


def se_hidden(channels: int, reduction: int) -> int:
    return max(1, channels // reduction)


def se_attention(z: torch.Tensor, w1: torch.Tensor, w2: torch.Tensor):
    """Functional squeeze-excitation.

    ``z`` is ``(B, C, H, W)``, ``w1`` is ``(C/r, C)`` and ``w2`` is ``(C, C/r)``.
    Returns the recalibrated map and the per-channel gates ``(B, C)``.
    """
    if z.shape[1] != w1.shape[1] or w2.shape[0] != z.shape[1]:
        raise ConfigError(f"SE weights {tuple(w1.shape)}/{tuple(w2.shape)} do not match "
                          f"{z.shape[1]} channels")
    s = z.mean(dim=(2, 3))
    gates = torch.sigmoid(F.relu(s @ w1.t()) @ w2.t())
    return z * gates[:, :, None, None], gates


class SqueezeExcitation(nn.Module):
    def __init__(self, channels: int, reduction: int = 16):
        super().__init__()
        hidden = se_hidden(channels, reduction)
        self.fc1 = nn.Linear(channels, hidden, bias=False)
        self.fc2 = nn.Linear(hidden, channels, bias=False)
        self.last_gates = None

    def gates(self, z):
        g = torch.sigmoid(self.fc2(F.relu(self.fc1(z.mean(dim=(2, 3))))))
        self.last_gates = g.detach()
        return g

    def forward(self, z):
        out, g = se_attention(z, self.fc1.weight, self.fc2.weight)
        self.last_gates = g.detach()
        return out


class ConvBNReLU(nn.Sequential):
    def __init__(self, c_in: int, c_out: int, kernel: int = 3):
        super().__init__(
            nn.Conv2d(c_in, c_out, kernel, padding=kernel // 2),
            nn.BatchNorm2d(c_out),
            nn.ReLU(inplace=False),
        )


class EncoderBlock(nn.Module):
    """Three conv-BN-ReLU layers, residual shortcut, ReLU, then SE."""

    def __init__(self, c_in: int, c_out: int, se_reduction: int = 16):
        super().__init__()
        self.c_in, self.c_out = c_in, c_out
        self.body = nn.Sequential(ConvBNReLU(c_in, c_out), ConvBNReLU(c_out, c_out),
                                  ConvBNReLU(c_out, c_out))
        if c_in == c_out:
            self.proj = None
        else:
            self.proj = nn.Sequential(nn.Conv2d(c_in, c_out, 1, bias=False), nn.BatchNorm2d(c_out))
        self.se = SqueezeExcitation(c_out, se_reduction)

    def forward(self, x):
        if x.shape[1] != self.c_in:
            raise ConfigError(f"encoder block expects {self.c_in} channels, got {x.shape[1]}")
        y = self.body(x)
        r = x if self.proj is None else self.proj(x)
        return self.se(F.relu(y + r))


class Encoder(nn.Module):
    """Stack of encoder blocks, each followed by spatial dropout and 2x max-pooling.

    ``forward`` returns every stage output; the last one is the bottleneck.
    """

    def __init__(self, in_channels: int, cfg: EncoderConfig):
        super().__init__()
        self.in_channels = in_channels
        self.cfg = cfg
        widths = [in_channels] + cfg.stage_channels
        self.blocks = nn.ModuleList(EncoderBlock(a, b, cfg.se_reduction)
                                    for a, b in zip(widths[:-1], widths[1:]))
        self.drop = nn.Dropout2d(cfg.dropout_rate)

    @property
    def out_channels(self) -> int:
        return self.cfg.stage_channels[-1]

    def forward(self, x):
        if x.shape[1] != self.in_channels:
            raise InvalidInputError(f"encoder expects {self.in_channels} input channels, "
                                    f"got {x.shape[1]}")
        factor = 2 ** self.cfg.stages
        if x.shape[2] % factor or x.shape[3] % factor:
            raise InvalidInputError(f"spatial size {tuple(x.shape[2:])} is not divisible by {factor}")
        feats = []
        for block in self.blocks:
            x = F.max_pool2d(self.drop(block(x)), 2)
            feats.append(x)
        return feats


def upsample_bilinear(x: torch.Tensor) -> torch.Tensor:
    """2x bilinear upsampling with half-pixel centres (``align_corners=False``)."""
    squeeze = x.dim() == 3
    if squeeze:
        x = x[None]
    out = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
    return out[0] if squeeze else out


class DecoderBlock(nn.Sequential):
    def __init__(self, c_in: int, c_out: int):
        super().__init__(ConvBNReLU(c_in, c_out), ConvBNReLU(c_out, c_out))


class Decoder(nn.Module):
    """``stages`` rounds of (upsample, decoder block, dropout), then the head:
    3x3 conv, BN, ReLU and a 1x1 conv to class logits."""

    def __init__(self, in_channels: int, num_classes: int, cfg: EncoderConfig, stages: int | None = None):
        super().__init__()
        stages = cfg.stages if stages is None else stages
        if stages != cfg.stages:
            raise ConfigError(f"decoder has {stages} upsampling stages but the encoder "
                              f"downsamples {cfg.stages} times")
        if num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        widths = list(reversed(cfg.stage_channels))[1:] + [cfg.stage_channels[0]]
        chans = [in_channels] + widths
        self.blocks = nn.ModuleList(DecoderBlock(a, b) for a, b in zip(chans[:-1], chans[1:]))
        self.drop = nn.Dropout2d(cfg.dropout_rate)
        self.head = nn.Sequential(ConvBNReLU(chans[-1], chans[-1]), nn.Conv2d(chans[-1], num_classes, 1))
        self.num_classes = num_classes

    def forward(self, fused):
        d = fused
        for block in self.blocks:
            d = self.drop(block(upsample_bilinear(d)))
        return self.head(d)


def predict_labels(logits: torch.Tensor) -> torch.Tensor:
    """Argmax over the class axis; ties resolve to the lowest class index."""
    return logits.argmax(dim=-3)

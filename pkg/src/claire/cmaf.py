"""Cross-modality attention fusion of optical and SAR bottleneck features."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError
from .network import ConvBNReLU, SqueezeExcitation


class MultiScaleAggregate(nn.Module):
    """Parallel 1x1/3x3/5x5 convolutions, concatenated and merged by a 1x1 conv."""

    def __init__(self, channels: int):
        super().__init__()
        self.branches = nn.ModuleList(nn.Conv2d(channels, channels, k, padding=k // 2) for k in (1, 3, 5))
        self.agg = nn.Conv2d(3 * channels, channels, 1)

    def forward(self, f):
        return self.agg(torch.cat([b(f) for b in self.branches], dim=1))


class SpatialAttention(nn.Module):
    """Channel-mean and channel-max maps -> 7x7 conv -> sigmoid; returns a ``(B,1,H,W)`` gate."""

    def __init__(self, kernel: int = 7):
        super().__init__()
        self.conv = nn.Conv2d(2, 1, kernel, padding=kernel // 2)

    def forward(self, p):
        pooled = torch.cat([p.mean(dim=1, keepdim=True), p.amax(dim=1, keepdim=True)], dim=1)
        return torch.sigmoid(self.conv(pooled))


class DualAttention(nn.Module):
    """``p * channel_gate(p) * spatial_gate(p)``."""

    def __init__(self, channels: int, reduction: int = 16):
        super().__init__()
        self.channel = SqueezeExcitation(channels, reduction)
        self.spatial = SpatialAttention()

    def gates(self, p):
        return self.channel.gates(p)[:, :, None, None], self.spatial(p)

    def forward(self, p):
        wc, ws = self.gates(p)
        return p * wc * ws


def dual_attention(p: torch.Tensor, module: DualAttention) -> torch.Tensor:
    return module(p)


@dataclass
class CMAFState:
    m_o: torch.Tensor
    m_s: torch.Tensor
    p_o2s: torch.Tensor
    p_s2o: torch.Tensor
    a_o: torch.Tensor
    a_s: torch.Tensor
    mhat_o: torch.Tensor
    mhat_s: torch.Tensor
    f_cat: torch.Tensor
    f_att: torch.Tensor
    f_fused: torch.Tensor


class CMAF(nn.Module):
    """Fusion bottleneck.

    ``forward`` returns ``(fused, gates, state)`` where ``gates`` is
    ``(B, 2, H, W)``: channel 0 weights the optical branch, channel 1 the SAR
    branch. The two masks are independent sigmoids and need not sum to one.
    """

    def __init__(self, channels: int, reduction: int = 16):
        super().__init__()
        self.channels = channels
        self.agg_o = MultiScaleAggregate(channels)
        self.agg_s = MultiScaleAggregate(channels)
        self.proj_o2s = nn.Conv2d(channels, channels, 3, padding=1)
        self.proj_s2o = nn.Conv2d(channels, channels, 3, padding=1)
        self.att_o = DualAttention(channels, reduction)
        self.att_s = DualAttention(channels, reduction)
        self.enh_o = ConvBNReLU(channels, channels)
        self.enh_s = ConvBNReLU(channels, channels)
        self.att_joint = DualAttention(2 * channels, reduction)
        self.gate = nn.Conv2d(2 * channels, 2, 1)
        self.fuse = nn.Sequential(ConvBNReLU(channels, channels), ConvBNReLU(channels, channels))

    def forward(self, f_o, f_s, force_gates=None):
        if f_o.shape != f_s.shape:
            raise ConfigError(f"optical {tuple(f_o.shape)} and SAR {tuple(f_s.shape)} "
                              "bottlenecks differ in shape")
        if f_o.shape[1] != self.channels:
            raise ConfigError(f"CMAF expects {self.channels} channels, got {f_o.shape[1]}")
        m_o = self.agg_o(f_o)
        m_s = self.agg_s(f_s)
        p_o2s = self.proj_o2s(m_o)
        p_s2o = self.proj_s2o(m_s)
        a_o = self.att_o(p_s2o)
        a_s = self.att_s(p_o2s)
        mhat_o = m_o + self.enh_o(a_o)
        mhat_s = m_s + self.enh_s(a_s)
        f_cat = torch.cat([mhat_o, mhat_s], dim=1)
        f_att = self.att_joint(f_cat)
        if force_gates is None:
            g = torch.sigmoid(self.gate(f_att))
        else:
            g1, g2 = (torch.as_tensor(v, dtype=f_o.dtype).expand_as(m_o[:, :1]) for v in force_gates)
            g = torch.cat([g1, g2], dim=1)
        fused = self.fuse(gated_sum(g, mhat_o, mhat_s))
        state = CMAFState(m_o, m_s, p_o2s, p_s2o, a_o, a_s, mhat_o, mhat_s, f_cat, f_att, fused)
        return fused, g, state


def gated_sum(g, mhat_o, mhat_s):
    """Input of the fusion block: ``g1 * mhat_o + g2 * mhat_s``."""
    return g[:, :1] * mhat_o + g[:, 1:] * mhat_s


def cmaf_forward(module: CMAF, f_o, f_s, force_gates=None):
    return module(f_o, f_s, force_gates=force_gates)

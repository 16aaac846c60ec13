"""Merge module and time-independent frame decoder."""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from .encoders import ResidualStack


def up2(x: torch.Tensor) -> torch.Tensor:
    return F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)


class MergeModule(nn.Module):
    """Blend scene and object features with a motion-conditioned gate.

    Three weight maps are computed from ``[object, scene, motion]`` at full,
    half and quarter resolution, fused coarse-to-fine, and squashed to a gate
    ``w`` in (0, 1). The frame feature is ``scene * w + object * (1 - w)``.
    """

    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        self.f1 = nn.Conv2d(3 * dim, dim, 1)
        self.f2 = nn.Conv2d(3 * dim, dim, 1)
        self.f3 = nn.Conv2d(3 * dim, dim, 1)
        self.f = nn.Conv2d(dim, dim, 1)
        self.down2 = nn.Conv2d(dim, dim, 2, stride=2)
        self.down4 = nn.Sequential(nn.Conv2d(dim, dim, 2, stride=2), nn.Conv2d(dim, dim, 2, stride=2))

    def gate(self, scene, obj, motion):
        h, w = scene.shape[-2:]
        if h % 4 or w % 4:
            raise ValueError(f"merge grid {h}x{w} must be divisible by 4")
        if not (scene.shape == obj.shape == motion.shape):
            raise ValueError(f"misaligned merge inputs: {tuple(scene.shape)}, {tuple(obj.shape)}, {tuple(motion.shape)}")
        w1 = self.f1(torch.cat([obj, scene, motion], 1))
        w2 = self.f2(torch.cat([self.down2(obj), self.down2(scene), self.down2(motion)], 1))
        w3 = self.f3(torch.cat([self.down4(obj), self.down4(scene), self.down4(motion)], 1))
        w4 = w2 + up2(w3)
        return torch.sigmoid(self.f(w1 + up2(w4)))

    def forward(self, scene, obj, motion):
        w = self.gate(scene, obj, motion)
        return scene * w + obj * (1 - w)


class FrameDecoder(nn.Module):
    """Residual stack then stride-2 transposed convolutions back to pixels."""

    def __init__(self, out_ch: int, dim: int, factor: int, base_channels: int = 32,
                 max_channels: int = 256, residual_depth: int = 4):
        super().__init__()
        n = int(math.log2(factor))
        widths = [min(base_channels * 2 ** i, max_channels) for i in range(n)][::-1]
        self.res = ResidualStack(dim, residual_depth)
        layers, ch = [], dim
        for width in widths:
            layers += [nn.ConvTranspose2d(ch, width, 4, stride=2, padding=1), nn.SiLU()]
            ch = width
        layers.append(nn.Conv2d(ch, out_ch, 3, padding=1))
        self.up = nn.Sequential(*layers)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.up(self.res(z))).clamp(0, 1)

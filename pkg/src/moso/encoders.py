"""Scene, object and motion encoders.

Layouts: clips enter as ``(B, T, C, H, W)``. Scene and object features are
``(B, D, h, w)``; motion features are ``(B, T, D, h, w)``.
"""

from __future__ import annotations

import math

import torch
from torch import nn


def _check_factor(f: int):
    if f < 2 or f & (f - 1):
        raise ValueError(f"downsample factor must be a power of two >= 2, got {f}")


def _groups(ch: int) -> int:
    for g in (8, 4, 2, 1):
        if ch % g == 0:
            return g
    return 1


class ResidualBlock(nn.Module):
    """Pre-activation residual block: (GN, SiLU, 3x3 conv) x2 plus skip."""

    def __init__(self, dim: int, hidden: int | None = None):
        super().__init__()
        hidden = hidden or dim
        self.body = nn.Sequential(
            nn.GroupNorm(_groups(dim), dim),
            nn.SiLU(),
            nn.Conv2d(dim, hidden, 3, padding=1),
            nn.GroupNorm(_groups(hidden), hidden),
            nn.SiLU(),
            nn.Conv2d(hidden, dim, 1),
        )

    def forward(self, x):
        return x + self.body(x)


class ResidualStack(nn.Module):
    def __init__(self, dim: int, depth: int):
        super().__init__()
        self.blocks = nn.Sequential(*[ResidualBlock(dim) for _ in range(depth)])

    def forward(self, x):
        return self.blocks(x)


class Downsampler(nn.Module):
    """Stride-2 convolutions reducing each frame by ``factor``, then a 1x1 conv to ``out_dim``."""

    def __init__(self, in_ch: int, out_dim: int, factor: int, base_channels: int, max_channels: int):
        super().__init__()
        _check_factor(factor)
        layers, ch = [], in_ch
        width = base_channels
        for _ in range(int(math.log2(factor))):
            layers += [nn.Conv2d(ch, width, 4, stride=2, padding=1), nn.SiLU()]
            ch, width = width, min(width * 2, max_channels)
        layers.append(nn.Conv2d(ch, out_dim, 1))
        self.net = nn.Sequential(*layers)
        self.factor = factor

    def forward(self, x):
        return self.net(x)


def apply_framewise(module: nn.Module, x: torch.Tensor) -> torch.Tensor:
    """Run a 2D module on every frame of a ``(B, T, ...)`` tensor."""
    B, T = x.shape[:2]
    y = module(x.reshape(B * T, *x.shape[2:]))
    return y.reshape(B, T, *y.shape[1:])


class ContentEncoder(nn.Module):
    """Scene/object encoder: per-frame downsampling, channel concat, TD->D projection, residual stack."""

    def __init__(self, T: int, in_ch: int, dim: int, factor: int, base_channels: int = 32,
                 max_channels: int = 256, residual_depth: int = 4):
        super().__init__()
        self.T, self.dim, self.factor = T, dim, factor
        self.down = Downsampler(in_ch, dim, factor, base_channels, max_channels)
        self.compress = nn.Conv2d(T * dim, dim, 1)
        self.res = ResidualStack(dim, residual_depth)

    def forward(self, video: torch.Tensor) -> torch.Tensor:
        B, T, C, H, W = video.shape
        if T != self.T:
            raise ValueError(f"encoder built for T={self.T}, got {T} frames")
        if H % self.factor or W % self.factor:
            raise ValueError(f"{H}x{W} frames not divisible by factor {self.factor}")
        z = apply_framewise(self.down, video)
        z = z.reshape(B, T * self.dim, H // self.factor, W // self.factor)
        return self.res(self.compress(z))


class TemporalAttention(nn.Module):
    """Single-head attention ``softmax(Z Wq (Z Wk)^T / sqrt(D)) Z Wv`` over a pool of frames."""

    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        self.w_q = nn.Parameter(torch.empty(dim, dim))
        self.w_k = nn.Parameter(torch.empty(dim, dim))
        self.w_v = nn.Parameter(torch.empty(dim, dim))
        for w in (self.w_q, self.w_k, self.w_v):
            nn.init.xavier_uniform_(w)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        if z.shape[-1] != self.dim:
            raise ValueError(f"expected feature dimension {self.dim}, got {z.shape[-1]}")
        q, k, v = z @ self.w_q, z @ self.w_k, z @ self.w_v
        attn = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(self.dim), dim=-1)
        return attn @ v


class MotionEncoder(nn.Module):
    """Per-frame downsampling, attention inside each of ``num_pools`` working pools, residual stack.

    Frames only exchange information with frames of the same pool, so the
    features of a pool are a function of that pool's input frames alone.
    """

    def __init__(self, T: int, in_ch: int, dim: int, factor: int, num_pools: int,
                 base_channels: int = 32, max_channels: int = 256, residual_depth: int = 4):
        super().__init__()
        if num_pools < 1 or T % num_pools:
            raise ValueError(f"T={T} is not divisible into {num_pools} working pools")
        self.T, self.dim, self.factor, self.num_pools = T, dim, factor, num_pools
        self.down = Downsampler(in_ch, dim, factor, base_channels, max_channels)
        self.attn = TemporalAttention(dim)
        self.res = ResidualStack(dim, residual_depth)

    def forward(self, motion: torch.Tensor) -> torch.Tensor:
        B, T, C, H, W = motion.shape
        if T != self.T:
            raise ValueError(f"encoder built for T={self.T}, got {T} frames")
        if H % self.factor or W % self.factor:
            raise ValueError(f"{H}x{W} frames not divisible by factor {self.factor}")
        z = apply_framewise(self.down, motion)  # B, T, D, h, w
        h, w = z.shape[-2:]
        pool = T // self.num_pools
        z = z.permute(0, 3, 4, 1, 2).reshape(B * h * w * self.num_pools, pool, self.dim)
        z = self.attn(z)
        z = z.reshape(B, h, w, T, self.dim).permute(0, 3, 4, 1, 2)
        return apply_framewise(self.res, z.contiguous())

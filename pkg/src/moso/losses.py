"""Stage-one objectives: reconstruction, commitment, SSIM and adversarial terms."""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn


def reconstruction_l2(x: torch.Tensor, x_rec: torch.Tensor) -> torch.Tensor:
    if x.shape != x_rec.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(x_rec.shape)}")
    return ((x - x_rec) ** 2).mean()


class PerceptualPyramid(nn.Module):
    """Frozen convolutional feature pyramid used as a perceptual distance.

    Weights are drawn once from a fixed seed and never trained. Features are
    unit-normalised over channels before comparison, as in learned
    perceptual metrics. A pretrained extractor can be swapped in through
    ``extractor``: any module mapping ``(N, C, H, W)`` to a list of maps.
    """

    def __init__(self, in_ch: int = 3, widths=(16, 32, 32), seed: int = 1234, extractor: nn.Module | None = None):
        super().__init__()
        self.extractor = extractor
        if extractor is None:
            gen = torch.Generator().manual_seed(seed)
            stages, ch = [], in_ch
            for i, width in enumerate(widths):
                conv = nn.Conv2d(ch, width, 3, stride=1 if i == 0 else 2, padding=1)
                with torch.no_grad():
                    conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) * math.sqrt(2.0 / (ch * 9)))
                    conv.bias.zero_()
                stages.append(nn.Sequential(conv, nn.ReLU()))
                ch = width
            self.stages = nn.ModuleList(stages)
        for p in self.parameters():
            p.requires_grad_(False)

    def features(self, x):
        if self.extractor is not None:
            return list(self.extractor(x))
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats

    def forward(self, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        """Mean perceptual distance between ``(B, T, C, H, W)`` clips, frame by frame."""
        if x.shape != y.shape:
            raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(y.shape)}")
        x = x.reshape(-1, *x.shape[-3:]) * 2 - 1
        y = y.reshape(-1, *y.shape[-3:]) * 2 - 1
        total = x.new_zeros(())
        for fx, fy in zip(self.features(x), self.features(y)):
            fx = fx / (fx.norm(dim=1, keepdim=True) + 1e-10)
            fy = fy / (fy.norm(dim=1, keepdim=True) + 1e-10)
            total = total + ((fx - fy) ** 2).sum(1).mean()
        return total


def commitment_loss(raw: dict, quantized: dict, reduction: str = "sum", weights: dict | None = None) -> torch.Tensor:
    """Squared distance between encoder outputs and their (stop-gradient) codes.

    ``reduction="sum"`` sums over every site and feature channel of a clip
    and averages over the batch; ``"mean"`` averages over all elements.
    """
    total, count = None, 0
    for k, z in raw.items():
        q = quantized[k]
        if z.shape != q.shape:
            raise ValueError(f"{k}: shape mismatch {tuple(z.shape)} vs {tuple(q.shape)}")
        w = 1.0 if weights is None else weights.get(k, 1.0)
        term = w * ((z - q.detach()) ** 2).sum()
        total = term if total is None else total + term
        count += z.numel()
    batch = next(iter(raw.values())).shape[0]
    return total / batch if reduction == "sum" else total / count


def _gaussian_window(size: int, sigma: float, dtype, device):
    coords = torch.arange(size, dtype=dtype, device=device) - (size - 1) / 2
    g = torch.exp(-(coords ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def ssim_frames(a: torch.Tensor, b: torch.Tensor, window: int = 11, sigma: float = 1.5,
                data_range: float = 1.0) -> torch.Tensor:
    """Per-frame SSIM of ``(N, C, H, W)`` images with a Gaussian window, channels averaged."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    N, C, H, W = a.shape
    if H < window or W < window:
        raise ValueError(f"frames of {H}x{W} are smaller than the {window}x{window} SSIM window")
    g = _gaussian_window(window, sigma, a.dtype, a.device)
    kernel = (g[:, None] * g[None, :]).expand(C, 1, window, window).contiguous()
    blur = lambda z: F.conv2d(z, kernel, groups=C)
    c1, c2 = (0.01 * data_range) ** 2, (0.03 * data_range) ** 2
    mu_a, mu_b = blur(a), blur(b)
    var_a = blur(a * a) - mu_a ** 2
    var_b = blur(b * b) - mu_b ** 2
    cov = blur(a * b) - mu_a * mu_b
    s = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2))
    return s.mean(dim=(1, 2, 3))


def neg_ssim_loss(x: torch.Tensor, x_rec: torch.Tensor) -> torch.Tensor:
    return -ssim_frames(x.reshape(-1, *x.shape[-3:]), x_rec.reshape(-1, *x.shape[-3:])).mean()


class VideoDiscriminator(nn.Module):
    """Clip-level critic: strided 3D convolutions to one score per clip."""

    def __init__(self, in_ch: int = 3, width: int = 32, depth: int = 3):
        super().__init__()
        layers, ch = [], in_ch
        for i in range(depth):
            out = width * 2 ** i
            layers += [nn.Conv3d(ch, out, (3, 4, 4), stride=(1, 2, 2), padding=1), nn.LeakyReLU(0.2)]
            ch = out
        self.net = nn.Sequential(*layers)
        self.head = nn.Linear(ch, 1)

    def forward(self, x):  # x: B, T, C, H, W
        h = self.net(x.transpose(1, 2) * 2 - 1)
        return self.head(h.mean(dim=(2, 3, 4))).squeeze(1)


class ImageDiscriminator(nn.Module):
    """Frame-level critic; scores every frame separately and averages per clip."""

    def __init__(self, in_ch: int = 3, width: int = 32, depth: int = 3):
        super().__init__()
        layers, ch = [], in_ch
        for i in range(depth):
            out = width * 2 ** i
            layers += [nn.Conv2d(ch, out, 4, stride=2, padding=1), nn.LeakyReLU(0.2)]
            ch = out
        self.net = nn.Sequential(*layers)
        self.head = nn.Linear(ch, 1)

    def forward(self, x):
        B, T = x.shape[:2]
        h = self.net(x.reshape(B * T, *x.shape[2:]) * 2 - 1).mean(dim=(2, 3))
        return self.head(h).reshape(B, T).mean(1)


def hinge_d_loss(real_scores, fake_scores):
    return F.relu(1 - real_scores).mean() + F.relu(1 + fake_scores).mean()


def hinge_g_loss(fake_scores):
    return -fake_scores.mean()


def adversarial_losses(x, x_rec, disc: nn.Module):
    """``(adv_g, adv_d)`` hinge objectives; ``adv_d`` sees ``x_rec`` detached."""
    adv_d = hinge_d_loss(disc(x), disc(x_rec.detach()))
    adv_g = hinge_g_loss(disc(x_rec))
    return adv_g, adv_d

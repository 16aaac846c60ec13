"""Frame-wise PSNR/SSIM and best-of-N evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np
import torch

from .losses import ssim_frames

PSNR_CAP = 99.0


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 3:
        a, b = a[None], b[None]
    if a.ndim != 4:
        raise ValueError(f"expected (T, H, W, C) clips, got shape {a.shape}")
    return a, b


def psnr_frames(a, b) -> np.ndarray:
    """Per-frame PSNR in dB of ``(T, H, W, C)`` clips on the [0, 1] range, capped at 99 dB."""
    a, b = _pair(a, b)
    mse = ((a - b) ** 2).mean(axis=(1, 2, 3))
    with np.errstate(divide="ignore"):
        out = np.where(mse > 0, -10 * np.log10(np.where(mse > 0, mse, 1.0)), PSNR_CAP)
    return np.minimum(out, PSNR_CAP)


def ssim_frames_np(a, b, window: int = 11, sigma: float = 1.5) -> np.ndarray:
    a, b = _pair(a, b)
    ta = torch.from_numpy(a).permute(0, 3, 1, 2)
    tb = torch.from_numpy(b).permute(0, 3, 1, 2)
    return ssim_frames(ta, tb, window, sigma).numpy()


def psnr(a, b) -> float:
    return float(psnr_frames(a, b).mean())


def ssim(a, b) -> float:
    return float(ssim_frames_np(a, b).mean())


@dataclass
class MetricReport:
    psnr: float
    ssim: float
    psnr_frames: List[float] = field(default_factory=list)
    ssim_frames: List[float] = field(default_factory=list)
    trials: int = 1

    def lines(self) -> List[str]:
        """Line-oriented ``key=value`` rendering."""
        out = [f"psnr={self.psnr:.6f}", f"ssim={self.ssim:.6f}", f"trials={self.trials}"]
        out += [f"frame={t} psnr={p:.6f} ssim={s:.6f}"
                for t, (p, s) in enumerate(zip(self.psnr_frames, self.ssim_frames))]
        return out

    def to_text(self) -> str:
        return "\n".join(self.lines()) + "\n"


def metric_report(pred, truth) -> MetricReport:
    p, s = psnr_frames(pred, truth), ssim_frames_np(pred, truth)
    return MetricReport(float(p.mean()), float(s.mean()), p.tolist(), s.tolist(), 1)


def evaluate_best_of(trials: Sequence, truth) -> MetricReport:
    """Best PSNR and best SSIM over stochastic trials, each picked independently.

    The per-frame series belong to the trial that attained the best value of
    the respective metric, so each aggregate is the mean of its series.
    """
    if len(trials) == 0:
        raise ValueError("evaluate_best_of needs at least one trial")
    reports = [metric_report(t, truth) for t in trials]
    bp = max(reports, key=lambda r: r.psnr)
    bs = max(reports, key=lambda r: r.ssim)
    return MetricReport(bp.psnr, bs.ssim, bp.psnr_frames, bs.ssim_frames, len(reports))

"""Video clip container and array helpers shared by every stage."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch


@dataclass
class VideoClip:
    """A ``T x H x W x C`` clip with pixel values in ``[0, 1]``."""

    frames: np.ndarray
    frame_rate: Optional[float] = None

    def __post_init__(self):
        self.frames = validate_frames(self.frames)

    @property
    def shape(self):
        return self.frames.shape

    def __len__(self):
        return self.frames.shape[0]


def validate_frames(frames) -> np.ndarray:
    """Return ``frames`` as an ndarray after checking the clip invariants."""
    if isinstance(frames, VideoClip):
        frames = frames.frames
    frames = np.asarray(frames)
    if frames.ndim != 4:
        raise ValueError(f"expected a T x H x W x C clip, got shape {frames.shape}")
    T, H, W, C = frames.shape
    if min(T, H, W) < 1:
        raise ValueError(f"empty clip dimension in shape {frames.shape}")
    if C not in (1, 3):
        raise ValueError(f"channel count must be 1 or 3, got {C}")
    if not np.issubdtype(frames.dtype, np.floating):
        raise TypeError(f"clip must hold real values, got dtype {frames.dtype}")
    if frames.size and (np.nanmin(frames) < 0 or np.nanmax(frames) > 1 or np.isnan(frames).any()):
        raise ValueError("clip values must lie in [0, 1]")
    return frames


def to_tensor(frames, dtype=torch.float32) -> torch.Tensor:
    """(T,H,W,C) or (B,T,H,W,C) array -> (B,T,C,H,W) tensor."""
    x = torch.as_tensor(np.asarray(frames), dtype=dtype)
    if x.ndim == 4:
        x = x.unsqueeze(0)
    return x.permute(0, 1, 4, 2, 3).contiguous()


def to_numpy(x: torch.Tensor) -> np.ndarray:
    """(B,T,C,H,W) or (T,C,H,W) tensor -> channel-last float32 array."""
    x = x.detach().cpu()
    if x.ndim == 5:
        return x.permute(0, 1, 3, 4, 2).numpy().astype(np.float32)
    return x.permute(0, 2, 3, 1).numpy().astype(np.float32)


def token_counts(H: int, W: int, T: int, f_m: int, f_s: int, f_o: int) -> dict:
    """Number of scene, object and motion tokens one clip is encoded into."""
    for f in (f_m, f_s, f_o):
        if H % f or W % f:
            raise ValueError(f"{H}x{W} frames are not divisible by factor {f}")
    scene = (H // f_s) * (W // f_s)
    obj = (H // f_o) * (W // f_o)
    motion = T * (H // f_m) * (W // f_m)
    return {"scene": scene, "object": obj, "motion": motion, "total": scene + obj + motion}

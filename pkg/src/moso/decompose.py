"""Threshold-based split of a clip into motion, scene and object videos.

The motion video is a signed second difference along time. A pixel whose
channel-wise peak absolute difference falls inside ``[c_lb, c_ub]`` is
assigned to the object video, everything else to the scene video. Tiny
differences are static background, very large ones are treated as abrupt
scene changes (camera cuts, flashes).

All functions accept numpy arrays or torch tensors and return the same kind.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .video import validate_frames

DEFAULT_C_LB = 0.1
DEFAULT_C_UB = 0.9


@dataclass(frozen=True)
class DecomposeParams:
    c_lb: float = DEFAULT_C_LB
    c_ub: float = DEFAULT_C_UB
    channel_axis: int = -1

    def __post_init__(self):
        if not (0 <= self.c_lb < self.c_ub <= 2):
            raise ValueError(f"need 0 <= c_lb < c_ub <= 2, got c_lb={self.c_lb}, c_ub={self.c_ub}")


@dataclass
class ComponentVideos:
    motion: np.ndarray
    scene: np.ndarray
    object: np.ndarray
    object_mask: np.ndarray


def _take(x, index, axis):
    if isinstance(x, torch.Tensor):
        return x.index_select(axis, torch.as_tensor(index, device=x.device))
    return np.take(x, index, axis=axis)


def frame_difference(frames, time_axis: int = 0):
    """Signed motion video ``m_t = 2 x_t - x_prev - x_next``.

    ``x_prev`` is the previous frame (frame 1 for itself at ``t=1``) and
    ``x_next`` the following one (frame ``T`` for itself at ``t=T``), so the
    two ends reduce to first differences and a constant clip maps to zeros.
    """
    T = frames.shape[time_axis]
    prev_idx = [0] + list(range(T - 1))
    next_idx = list(range(1, T)) + [T - 1]
    return 2 * frames - _take(frames, prev_idx, time_axis) - _take(frames, next_idx, time_axis)


def object_mask(motion, c_lb: float = DEFAULT_C_LB, c_ub: float = DEFAULT_C_UB, channel_axis: int = -1):
    """Boolean mask of pixels whose peak |motion| over channels lies in [c_lb, c_ub]."""
    if isinstance(motion, torch.Tensor):
        d_pixel = motion.abs().amax(dim=channel_axis)
    else:
        d_pixel = np.abs(motion).max(axis=channel_axis)
    return (d_pixel >= c_lb) & (d_pixel <= c_ub)


def split_by_mask(frames, mask, channel_axis: int = -1):
    """Return ``(scene, object)`` with ``object = mask * x`` and ``scene = (1 - mask) * x``."""
    if isinstance(frames, torch.Tensor):
        m = mask.unsqueeze(channel_axis).to(frames.dtype)
    else:
        m = np.expand_dims(mask, channel_axis).astype(frames.dtype)
    return (1 - m) * frames, m * frames


def decompose(clip, params: DecomposeParams | None = None, **kwargs) -> ComponentVideos:
    """Decompose a ``T x H x W x C`` clip into motion, scene and object videos."""
    if params is None:
        params = DecomposeParams(**kwargs)
    frames = validate_frames(clip)
    motion = frame_difference(frames, time_axis=0)
    mask = object_mask(motion, params.c_lb, params.c_ub, params.channel_axis)
    scene, obj = split_by_mask(frames, mask, params.channel_axis)
    return ComponentVideos(motion=motion, scene=scene, object=obj, object_mask=mask.astype(np.uint8))


def recombine(components: ComponentVideos) -> np.ndarray:
    """Inverse of :func:`decompose`: ``scene + object``.

    Raises ``ValueError`` if shapes disagree or the two supports overlap.
    """
    scene, obj = np.asarray(components.scene), np.asarray(components.object)
    if scene.shape != obj.shape:
        raise ValueError(f"scene shape {scene.shape} does not match object shape {obj.shape}")
    if np.any((scene != 0) & (obj != 0)):
        raise ValueError("scene and object videos overlap; they must have disjoint support")
    return scene + obj

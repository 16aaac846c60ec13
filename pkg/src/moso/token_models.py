"""Stage two: bidirectional transformers over scene, object and motion tokens.

``SceneObjectTransformer`` serves two roles with one set of weights,
selected by a task-mode embedding:

* ``so`` mode maps the scene/object tokens of a pseudo video to logits over
  the scene/object tokens of the full clip;
* ``g`` mode reads the clip's scene/object tokens plus ``T`` frame-index
  query slots and returns one guidance vector per frame.

``MotionTransformer`` predicts masked motion tokens from the unmasked ones
and the guidance vectors. Sequence layout is
``[scene (row-major) | object (row-major)]`` for the former and
``[guidance_1..T | motion frame 1 (row-major) | ... | frame T]`` for the latter.
"""

from __future__ import annotations

import math

import torch
from torch import nn

from .config import TransformerConfig


class Backbone(nn.Module):
    """Pre-norm transformer encoder working at ``hidden_dim`` on ``embedding_dim`` inputs."""

    def __init__(self, embedding_dim, hidden_dim, intermediate_dim, blocks, heads, dropout):
        super().__init__()
        self.in_proj = nn.Linear(embedding_dim, hidden_dim)
        layer = nn.TransformerEncoderLayer(hidden_dim, heads, intermediate_dim, dropout=dropout,
                                           activation="gelu", batch_first=True, norm_first=True)
        self.blocks = nn.TransformerEncoder(layer, blocks, enable_nested_tensor=False)
        self.norm = nn.LayerNorm(hidden_dim)
        self.drop = nn.Dropout(dropout)

    def forward(self, x):
        return self.norm(self.blocks(self.drop(self.in_proj(x))))


def _pos(n, dim):
    return nn.Parameter(torch.randn(n, dim) * 0.02)


class SceneObjectTransformer(nn.Module):
    MODES = {"so": 0, "g": 1}

    def __init__(self, cfg: TransformerConfig, vocab: int, scene_hw, object_hw, T: int):
        super().__init__()
        E = cfg.embedding_dim
        self.vocab, self.T = vocab, T
        self.mask_id = vocab
        self.n_scene = scene_hw[0] * scene_hw[1]
        self.n_object = object_hw[0] * object_hw[1]
        self.tok = nn.Embedding(vocab + 1, E)
        self.pos_scene = _pos(self.n_scene, E)
        self.pos_object = _pos(self.n_object, E)
        self.segment = nn.Embedding(3, E)
        self.mode = nn.Embedding(2, E)
        self.queries = _pos(T, E)
        self.body = Backbone(E, cfg.hidden_dim, cfg.intermediate_dim, cfg.so_blocks, cfg.heads, cfg.dropout)
        self.head = nn.Linear(cfg.hidden_dim, vocab)
        self.hidden_dim = cfg.hidden_dim

    def _content(self, scene, obj, mode):
        B = scene.shape[0]
        s = self.tok(scene.reshape(B, -1)) + self.pos_scene + self.segment.weight[0]
        o = self.tok(obj.reshape(B, -1)) + self.pos_object + self.segment.weight[1]
        return torch.cat([s, o], 1) + self.mode.weight[self.MODES[mode]]

    def forward_so(self, scene, obj):
        """Logits ``(B, n_scene + n_object, vocab)`` for the clip's scene/object tokens."""
        return self.head(self.body(self._content(scene, obj, "so")))

    def forward_g(self, scene, obj):
        """Guidance embeddings ``(B, T, hidden_dim)``."""
        B = scene.shape[0]
        q = (self.queries + self.segment.weight[2] + self.mode.weight[self.MODES["g"]]).expand(B, -1, -1)
        h = self.body(torch.cat([self._content(scene, obj, "g"), q], 1))
        return h[:, -self.T:]


class MotionTransformer(nn.Module):
    def __init__(self, cfg: TransformerConfig, vocab: int, motion_shape, guidance_dim: int):
        super().__init__()
        E = cfg.embedding_dim
        T, h, w = motion_shape
        self.vocab, self.mask_id = vocab, vocab
        self.T, self.hw = T, h * w
        self.tok = nn.Embedding(vocab + 1, E)
        self.frame = _pos(T, E)
        self.spatial = _pos(h * w, E)
        self.guide_proj = nn.Linear(guidance_dim, E)
        self.guide_segment = _pos(1, E)
        self.body = Backbone(E, cfg.hidden_dim, cfg.intermediate_dim, cfg.m_blocks, cfg.heads, cfg.dropout)
        self.head = nn.Linear(cfg.hidden_dim, vocab)

    def forward(self, motion, guidance):
        """``motion``: ``(B, T, h, w)`` with mask ids; returns logits ``(B, T, h, w, vocab)``."""
        B, T, h, w = motion.shape
        m = self.tok(motion.reshape(B, T, h * w)) + self.frame[:, None] + self.spatial[None]
        g = self.guide_proj(guidance) + self.frame + self.guide_segment
        x = torch.cat([g, m.reshape(B, T * h * w, -1)], 1)
        out = self.head(self.body(x)[:, T:])
        return out.reshape(B, T, h, w, self.vocab)


class TokenModels(nn.Module):
    """The shared scene/object/guidance transformer and the motion transformer."""

    def __init__(self, cfg: TransformerConfig, vocab: int, grid_shapes: dict):
        super().__init__()
        self.cfg = cfg
        self.vocab = vocab
        self.mask_id = vocab
        self.grid_shapes = {k: tuple(v) for k, v in grid_shapes.items()}
        T = self.grid_shapes["motion"][0]
        if not 0 <= cfg.K <= T:
            raise ValueError(f"K={cfg.K} outside [0, T={T}]")
        self.T = T
        self.so_g = SceneObjectTransformer(cfg, vocab, self.grid_shapes["scene"], self.grid_shapes["object"], T)
        self.motion = MotionTransformer(cfg, vocab, self.grid_shapes["motion"], cfg.hidden_dim)

    def split_so(self, logits):
        n = self.so_g.n_scene
        hs, ws = self.grid_shapes["scene"]
        ho, wo = self.grid_shapes["object"]
        B = logits.shape[0]
        return logits[:, :n].reshape(B, hs, ws, -1), logits[:, n:].reshape(B, ho, wo, -1)


def mask_schedule(r, shape: str = "cosine"):
    """Fraction of tokens masked at progress ``r`` in [0, 1]; 1 at r=0, 0 at r=1."""
    if shape != "cosine":
        raise ValueError(f"unknown mask schedule {shape!r}")
    if isinstance(r, torch.Tensor):
        r = r.clamp(0, 1)
        return torch.where(r >= 1, torch.zeros_like(r), torch.cos(math.pi / 2 * r))
    r = min(max(float(r), 0.0), 1.0)
    return 0.0 if r == 1.0 else math.cos(math.pi / 2 * r)


def mask_count(ratio: float, L: int) -> int:
    """``round-half-up(ratio * L)`` clamped to ``[0, L]``."""
    return int(min(max(math.floor(ratio * L + 0.5), 0), L))

"""Stage one: the three-encoder vector-quantized video autoencoder."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .codebook import Codebook, straight_through
from .config import DecomposeConfig, VQVAEConfig
from .decompose import frame_difference, object_mask, split_by_mask
from .decoder import FrameDecoder, MergeModule
from .encoders import ContentEncoder, MotionEncoder

COMPONENTS = ("scene", "object", "motion")


@dataclass
class TokenBundle:
    """Scene ``(B, hs, ws)``, object ``(B, ho, wo)`` and motion ``(B, T, hm, wm)`` token grids."""

    scene: torch.Tensor
    object: torch.Tensor
    motion: torch.Tensor

    def __getitem__(self, key):
        return getattr(self, key)

    def select(self, index) -> "TokenBundle":
        return TokenBundle(self.scene[index], self.object[index], self.motion[index])

    def clone(self) -> "TokenBundle":
        return TokenBundle(self.scene.clone(), self.object.clone(), self.motion.clone())

    def equal(self, other: "TokenBundle") -> bool:
        return all(torch.equal(self[k], other[k]) for k in COMPONENTS)

    @staticmethod
    def cat(bundles) -> "TokenBundle":
        return TokenBundle(*(torch.cat([b[k] for b in bundles]) for k in COMPONENTS))


def pool_frame_difference(x: torch.Tensor, num_pools: int) -> torch.Tensor:
    """Frame difference computed separately inside each working pool of a ``(B, T, ...)`` clip.

    With one pool this is the plain clip-level frame difference. With more
    pools, the motion input of a pool never looks at frames of another pool.
    """
    B, T = x.shape[:2]
    pooled = x.reshape(B, num_pools, T // num_pools, *x.shape[2:])
    return frame_difference(pooled, time_axis=2).reshape(x.shape)


def _channel_last(z):
    return z.movedim(-3, -1)


def _channel_first(z):
    return z.movedim(-1, -3)


class MosoVQVAE(nn.Module):
    def __init__(self, cfg: VQVAEConfig, decompose: DecomposeConfig | None = None):
        super().__init__()
        self.cfg = cfg.validate()
        self.decompose_cfg = decompose or DecomposeConfig()
        D = cfg.codebook_dim
        common = dict(base_channels=cfg.base_channels, max_channels=cfg.max_channels,
                      residual_depth=cfg.residual_depth)
        self.scene_encoder = ContentEncoder(cfg.T, cfg.C, D, cfg.f_s, **common)
        self.object_encoder = ContentEncoder(cfg.T, cfg.C, D, cfg.f_o, **common)
        self.motion_encoder = MotionEncoder(cfg.T, cfg.C, D, cfg.f_m, cfg.N_t, **common)
        book = dict(decay=cfg.ema_decay, eps=cfg.ema_eps, dead_patience=cfg.dead_patience)
        if cfg.share_codebook:
            self.codebook = Codebook(cfg.codebook_size, D, **book)
        else:
            self.codebooks = nn.ModuleDict({k: Codebook(cfg.codebook_size, D, **book) for k in COMPONENTS})
        self.merge = MergeModule(D)
        self.work_factor = min(cfg.f_s, cfg.f_o, cfg.f_m)
        self.decoder = FrameDecoder(cfg.C, D, self.work_factor, **common)

    # -- codebooks -------------------------------------------------------
    def book(self, component: str) -> Codebook:
        if self.cfg.share_codebook:
            return self.codebook
        return self.codebooks[component]

    def books(self):
        if self.cfg.share_codebook:
            return {"shared": (self.codebook, COMPONENTS)}
        return {k: (self.codebooks[k], (k,)) for k in COMPONENTS}

    @property
    def grid_shapes(self):
        c = self.cfg
        return {"scene": (c.H // c.f_s, c.W // c.f_s), "object": (c.H // c.f_o, c.W // c.f_o),
                "motion": (c.T, c.H // c.f_m, c.W // c.f_m)}

    # -- encoding --------------------------------------------------------
    def motion_input(self, x: torch.Tensor) -> torch.Tensor:
        return pool_frame_difference(x, self.cfg.N_t)

    def content_inputs(self, x: torch.Tensor, use_preproc: bool):
        """Scene/object encoder inputs: decomposed videos, or raw frames after the handoff."""
        if not use_preproc:
            return x, x
        mask = object_mask(frame_difference(x, time_axis=1), self.decompose_cfg.c_lb,
                           self.decompose_cfg.c_ub, channel_axis=2)
        return split_by_mask(x, mask, channel_axis=2)

    def encode_features(self, x: torch.Tensor, use_preproc: bool = False) -> dict:
        scene_in, object_in = self.content_inputs(x, use_preproc)
        return {
            "scene": self.scene_encoder(scene_in),
            "object": self.object_encoder(object_in),
            "motion": self.motion_encoder(self.motion_input(x)),
        }

    def quantize(self, raw: dict):
        quantized, tokens = {}, {}
        for k in COMPONENTS:
            q, tok = self.book(k).quantize(_channel_last(raw[k]))
            quantized[k] = _channel_first(q)
            tokens[k] = tok
        return quantized, TokenBundle(**tokens)

    @torch.no_grad()
    def encode(self, x: torch.Tensor, use_preproc: bool = False) -> TokenBundle:
        return self.quantize(self.encode_features(x, use_preproc))[1]

    # -- decoding --------------------------------------------------------
    def _to_work_grid(self, z: torch.Tensor, factor: int) -> torch.Tensor:
        scale = factor // self.work_factor
        if scale == 1:
            return z
        return F.interpolate(z, scale_factor=scale, mode="nearest")

    def decode_frame(self, scene, obj, motion_t):
        """Decode one frame per batch item from ``(B, D, h, w)`` features."""
        c = self.cfg
        s = self._to_work_grid(scene, c.f_s)
        o = self._to_work_grid(obj, c.f_o)
        m = self._to_work_grid(motion_t, c.f_m)
        return self.decoder(self.merge(s, o, m))

    def merge_weights(self, scene, obj, motion_t):
        c = self.cfg
        return self.merge.gate(self._to_work_grid(scene, c.f_s), self._to_work_grid(obj, c.f_o),
                               self._to_work_grid(motion_t, c.f_m))

    def decode(self, scene, obj, motion):
        """Decode ``(B, T, C, H, W)`` frames; frame ``t`` only sees ``motion[:, t]``."""
        B, T = motion.shape[:2]
        rep = lambda z: z.unsqueeze(1).expand(B, T, *z.shape[1:]).reshape(B * T, *z.shape[1:])
        frames = self.decode_frame(rep(scene), rep(obj), motion.reshape(B * T, *motion.shape[2:]))
        return frames.reshape(B, T, *frames.shape[1:])

    def lookup(self, tokens: TokenBundle) -> dict:
        return {k: _channel_first(self.book(k).lookup(tokens[k])) for k in COMPONENTS}

    @torch.no_grad()
    def decode_tokens(self, tokens: TokenBundle) -> torch.Tensor:
        f = self.lookup(tokens)
        return self.decode(f["scene"], f["object"], f["motion"])

    @torch.no_grad()
    def decode_component(self, tokens: TokenBundle, which: str) -> torch.Tensor:
        """Decode selected components with the others replaced by all-zero features."""
        keep = {"scene": {"scene"}, "object": {"object"}, "object+motion": {"object", "motion"},
                "scene+motion": {"scene", "motion"}}
        if which not in keep:
            raise ValueError(f"unknown component selector {which!r}; choose from {sorted(keep)}")
        f = self.lookup(tokens)
        f = {k: v if k in keep[which] else torch.zeros_like(v) for k, v in f.items()}
        return self.decode(f["scene"], f["object"], f["motion"])

    # -- training forward ------------------------------------------------
    def forward(self, x: torch.Tensor, use_preproc: bool = False) -> dict:
        raw = self.encode_features(x, use_preproc)
        quantized, tokens = self.quantize(raw)
        st = {k: straight_through(raw[k], quantized[k]) for k in COMPONENTS}
        recon = self.decode(st["scene"], st["object"], st["motion"])
        return {"recon": recon, "raw": raw, "quantized": quantized, "tokens": tokens}

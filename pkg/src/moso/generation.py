"""Pseudo videos, working-pool partitions, masked decoding and downstream tasks."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import torch
import torch.nn.functional as F

from .config import GenerationConfig
from .token_models import TokenModels, mask_count, mask_schedule
from .vqvae import MosoVQVAE, TokenBundle


def make_pseudo(previous: torch.Tensor, T: int, time_axis: int = 1) -> torch.Tensor:
    """Pad ``K`` given frames to ``T`` by repeating the last one."""
    K = previous.shape[time_axis]
    if not 1 <= K <= T:
        raise ValueError(f"need 1 <= K <= T, got K={K}, T={T}")
    last = previous.narrow(time_axis, K - 1, 1)
    reps = [1] * previous.ndim
    reps[time_axis] = T - K
    return torch.cat([previous, last.repeat(*reps)], time_axis)


def pool_partition(T: int, K: int, c: int = 1) -> int:
    """Number of working pools ``N_t = c T / K`` that keeps frames ``1..K`` in pools of their own."""
    if not (1 <= K <= T):
        raise ValueError(f"need 1 <= K <= T, got K={K}, T={T}")
    if not (1 <= c <= K) or K % c:
        raise ValueError(f"c={c} must divide K={K}")
    if (c * T) % K:
        raise ValueError(f"K={K} must divide c*T={c * T}")
    return c * T // K


def pool_members(T: int, num_pools: int) -> List[range]:
    size = T // num_pools
    return [range(p * size, (p + 1) * size) for p in range(num_pools)]


@torch.no_grad()
def check_token_equality(vqvae: MosoVQVAE, x: torch.Tensor, K: int, c: int = 1) -> bool:
    """Whether motion tokens of frames ``1..K`` agree between ``x`` and its pseudo video."""
    T = vqvae.cfg.T
    expected = pool_partition(T, K, c)
    if vqvae.cfg.N_t != expected:
        raise ValueError(f"model uses N_t={vqvae.cfg.N_t}, but T={T}, K={K}, c={c} needs N_t={expected}")
    pseudo = make_pseudo(x[:, :K], T)
    a = vqvae.encode(x).motion[:, :K]
    b = vqvae.encode(pseudo).motion[:, :K]
    return bool(torch.equal(a, b))


# -- training-time masking ------------------------------------------------

def maskable_positions(shape, K: int, device=None) -> torch.Tensor:
    """Boolean ``(T, h, w)`` map of positions that may be masked: every frame after ``K``."""
    T, h, w = shape
    m = torch.zeros(T, h, w, dtype=torch.bool, device=device)
    m[K:] = True
    return m


def mask_for_training(motion: torch.Tensor, K: int, r: torch.Tensor, mask_id: int,
                      generator: Optional[torch.Generator] = None, schedule: str = "cosine"):
    """Mask ``round(gamma(r) L)`` uniformly chosen motion tokens of frames after ``K``.

    ``motion`` is ``(B, T, h, w)``, ``r`` is ``(B,)``. Returns
    ``(masked_tokens, mask)`` where ``mask`` marks the positions now holding
    ``mask_id``. Frames ``1..K`` are never masked.
    """
    B = motion.shape[0]
    allowed = maskable_positions(motion.shape[1:], K, motion.device).reshape(-1)
    L = int(allowed.sum())
    scores = torch.rand(B, allowed.numel(), generator=generator).to(motion.device)
    scores[:, ~allowed] = -1.0
    order = scores.argsort(dim=1, descending=True)
    mask = torch.zeros(B, allowed.numel(), dtype=torch.bool, device=motion.device)
    for b in range(B):
        n = mask_count(float(mask_schedule(float(r[b]), schedule)), L)
        mask[b, order[b, :n]] = True
    mask = mask.reshape(motion.shape)
    return motion.masked_fill(mask, mask_id), mask


# -- iterative decoding ---------------------------------------------------

@dataclass
class GenerationTrace:
    masked_counts: List[int] = field(default_factory=list)


def _sample(logits, temperature, generator):
    if temperature <= 0:
        return logits.argmax(-1)
    probs = F.softmax(logits.float() / temperature, dim=-1)
    flat = probs.reshape(-1, probs.shape[-1])
    return torch.multinomial(flat, 1, generator=generator).reshape(probs.shape[:-1])


@torch.no_grad()
def generate_motion(models: TokenModels, guidance: torch.Tensor, motion: torch.Tensor, fixed: torch.Tensor,
                    S: int = 16, schedule: str = "cosine", temperature: float = 1.0,
                    generator: Optional[torch.Generator] = None, remask: str = "random",
                    trace: Optional[GenerationTrace] = None) -> torch.Tensor:
    """Fill every non-fixed motion position in ``S`` rounds of parallel sampling.

    Round ``s`` samples all currently masked positions, then re-masks
    ``round(gamma(s/S) L)`` of the positions it just sampled. Positions
    sampled in earlier rounds and the ``fixed`` conditioning tokens are
    never re-masked. ``remask="random"`` picks positions uniformly;
    ``"confidence"`` re-masks the least likely samples.
    """
    if S < 1:
        raise ValueError("S must be >= 1")
    if remask not in ("random", "confidence"):
        raise ValueError(f"unknown remask mode {remask!r}")
    mask_id = models.mask_id
    B = motion.shape[0]
    fixed = fixed.expand_as(motion)
    tokens = torch.where(fixed, motion, torch.full_like(motion, mask_id))
    masked = ~fixed
    L = int(masked[0].sum())
    if trace is not None:
        trace.masked_counts.append(L)
    for s in range(1, S + 1):
        if not masked.any():
            if trace is not None:
                trace.masked_counts.append(0)
            continue
        logits = models.motion(tokens, guidance)
        sampled = _sample(logits, temperature, generator)
        tokens = torch.where(masked, sampled, tokens)
        n = mask_count(mask_schedule(s / S, schedule), L)
        if remask == "random":
            scores = torch.rand(masked.shape, generator=generator).to(motion.device)
        else:
            logp = F.log_softmax(logits.float() / max(temperature, 1e-6), -1)
            scores = -logp.gather(-1, sampled.unsqueeze(-1)).squeeze(-1)
        scores = scores.masked_fill(~masked, float("-inf")).reshape(B, -1)
        new_mask = torch.zeros_like(scores, dtype=torch.bool)
        if n > 0:
            new_mask.scatter_(1, scores.topk(n, dim=1).indices, True)
        masked = new_mask.reshape(masked.shape) & masked
        tokens = tokens.masked_fill(masked, mask_id)
        if trace is not None:
            trace.masked_counts.append(int(masked[0].sum()))
    return tokens


# -- downstream tasks -----------------------------------------------------

class Predictor:
    """Bundles a frozen stage-one model with trained token models for inference."""

    def __init__(self, vqvae: MosoVQVAE, models: TokenModels, gen: GenerationConfig | None = None):
        self.vqvae = vqvae.eval()
        self.models = models.eval()
        self.gen = gen or GenerationConfig()
        self.T = vqvae.cfg.T

    def _generator(self, seed):
        return torch.Generator().manual_seed(int(seed))

    def sample_scene_object(self, scene, obj, generator, temperature=None):
        t = self.gen.so_temperature if temperature is None else temperature
        logits_s, logits_o = self.models.split_so(self.models.so_g.forward_so(scene, obj))
        return _sample(logits_s, t, generator), _sample(logits_o, t, generator)

    @torch.no_grad()
    def predict_tokens(self, previous: torch.Tensor, seed: int = 0,
                       trace: Optional[GenerationTrace] = None) -> TokenBundle:
        K = previous.shape[1]
        if K >= self.T:
            raise ValueError(f"nothing to predict: K={K} >= T={self.T}")
        if K != self.models.cfg.K:
            raise ValueError(f"token models were trained for K={self.models.cfg.K}, got {K} frames")
        g = self._generator(seed)
        pseudo = self.vqvae.encode(make_pseudo(previous, self.T))
        scene, obj = self.sample_scene_object(pseudo.scene, pseudo.object, g)
        guidance = self.models.so_g.forward_g(scene, obj)
        fixed = maskable_positions(pseudo.motion.shape[1:], K).logical_not().unsqueeze(0)
        motion = generate_motion(self.models, guidance, pseudo.motion, fixed, self.gen.S, self.gen.schedule,
                                 self.gen.temperature, g, self.gen.remask, trace)
        return TokenBundle(scene, obj, motion)

    @torch.no_grad()
    def predict(self, previous: torch.Tensor, seed: int = 0) -> torch.Tensor:
        """Predict frames ``K+1..T`` from ``(B, K, C, H, W)`` previous frames."""
        K = previous.shape[1]
        return self.vqvae.decode_tokens(self.predict_tokens(previous, seed))[:, K:]

    @torch.no_grad()
    def predict_long(self, previous: torch.Tensor, n_clips: int, seed: int = 0) -> torch.Tensor:
        """Roll prediction forward ``n_clips`` times; returns given plus predicted frames."""
        if n_clips < 1:
            raise ValueError("n_clips must be >= 1")
        K = previous.shape[1]
        frames = [previous]
        context = previous
        for i in range(n_clips):
            new = self.predict(context, seed + i)
            frames.append(new)
            context = torch.cat([context, new], 1)[:, -K:]
        return torch.cat(frames, 1)

    @torch.no_grad()
    def generate_unconditional(self, batch: int = 1, seed: int = 0) -> torch.Tensor:
        if not self.models.cfg.unconditional:
            raise ValueError("token models were trained only for conditional prediction")
        g = self._generator(seed)
        mask_id = self.models.mask_id
        hs, ws = self.models.grid_shapes["scene"]
        ho, wo = self.models.grid_shapes["object"]
        scene, obj = self.sample_scene_object(torch.full((batch, hs, ws), mask_id, dtype=torch.long),
                                              torch.full((batch, ho, wo), mask_id, dtype=torch.long), g)
        guidance = self.models.so_g.forward_g(scene, obj)
        shape = (batch, *self.models.grid_shapes["motion"])
        motion = torch.full(shape, mask_id, dtype=torch.long)
        fixed = torch.zeros(shape, dtype=torch.bool)
        motion = generate_motion(self.models, guidance, motion, fixed, self.gen.S, self.gen.schedule,
                                 self.gen.temperature, g, self.gen.remask)
        return self.vqvae.decode_tokens(TokenBundle(scene, obj, motion))

    @torch.no_grad()
    def interpolate_tokens(self, frames: torch.Tensor, known: torch.Tensor, seed: int = 0) -> TokenBundle:
        """Tokens for a clip whose frames with ``known == False`` are to be generated.

        Gap frames are first filled with the nearest earlier known frame (or
        the first known one) so the clip can be encoded; the motion tokens of
        known frames are then held fixed while the gaps are generated.
        """
        known = torch.as_tensor(known, dtype=torch.bool)
        if known.ndim != 1 or known.numel() != self.T:
            raise ValueError(f"known must be a boolean vector of length T={self.T}")
        if not known.any():
            raise ValueError("at least one frame must be known")
        filled = frames.clone()
        idx = known.nonzero().squeeze(1)
        for t in range(self.T):
            if not known[t]:
                src = idx[idx < t].max() if (idx < t).any() else idx.min()
                filled[:, t] = frames[:, src]
        tokens = self.vqvae.encode(filled)
        if known.all():
            return tokens
        g = self._generator(seed)
        guidance = self.models.so_g.forward_g(tokens.scene, tokens.object)
        fixed = known.view(1, -1, 1, 1).expand_as(tokens.motion)
        motion = generate_motion(self.models, guidance, tokens.motion, fixed, self.gen.S, self.gen.schedule,
                                 self.gen.temperature, g, self.gen.remask)
        return TokenBundle(tokens.scene, tokens.object, motion)

    @torch.no_grad()
    def interpolate(self, frames: torch.Tensor, known, seed: int = 0) -> torch.Tensor:
        return self.vqvae.decode_tokens(self.interpolate_tokens(frames, known, seed))


def swap_scene(bundle_x: TokenBundle, bundle_y: TokenBundle) -> TokenBundle:
    """Object and motion from ``x``, scene from ``y``."""
    if bundle_x.scene.shape != bundle_y.scene.shape:
        raise ValueError(f"scene grids differ: {tuple(bundle_x.scene.shape)} vs {tuple(bundle_y.scene.shape)}")
    return TokenBundle(bundle_y.scene, bundle_x.object, bundle_x.motion)


@torch.no_grad()
def manipulate(bundle_x: TokenBundle, bundle_y: TokenBundle, vqvae: MosoVQVAE) -> torch.Tensor:
    """Decode the objects and motion of ``x`` over the scene of ``y``."""
    return vqvae.decode_tokens(swap_scene(bundle_x, bundle_y))

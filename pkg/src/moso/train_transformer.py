"""Stage-two training: scene/object prediction, guidance and masked motion modelling."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .config import MosoConfig, config_from_dict
from .generation import make_pseudo, mask_for_training, pool_partition
from .io import load_checkpoint, load_into, module_arrays, save_checkpoint
from .token_models import TokenModels
from .vqvae import MosoVQVAE, TokenBundle

logger = logging.getLogger(__name__)


@dataclass
class TokenPairs:
    """Target tokens of full clips and tokens of their pseudo videos."""

    target: TokenBundle
    pseudo: TokenBundle

    def __len__(self):
        return self.target.scene.shape[0]

    def select(self, index):
        return TokenPairs(self.target.select(index), self.pseudo.select(index))


@torch.no_grad()
def encode_pairs(vqvae: MosoVQVAE, clips: torch.Tensor, K: int, batch_size: int = 32) -> TokenPairs:
    """Tokenize ``(N, T, C, H, W)`` clips and their ``K``-frame pseudo videos with a frozen stage one."""
    vqvae.eval()
    T = vqvae.cfg.T
    targets, pseudos = [], []
    for i in range(0, len(clips), batch_size):
        x = clips[i:i + batch_size]
        targets.append(vqvae.encode(x))
        pseudos.append(vqvae.encode(make_pseudo(x[:, :K], T)))
    return TokenPairs(TokenBundle.cat(targets), TokenBundle.cat(pseudos))


def augment_clips(clips: torch.Tensor, copies: int, seed: int = 0) -> torch.Tensor:
    """Originals plus ``copies`` randomly transformed versions of each ``(N, T, C, H, W)`` clip.

    Transforms are flips, transposition (square frames only), time reversal
    and a channel permutation, drawn independently per clip and copy. All of
    them map a bouncing-sprite clip to another valid one.
    """
    if copies <= 0:
        return clips
    g = torch.Generator().manual_seed(seed)
    N, T, C, H, W = clips.shape
    out = [clips]
    for _ in range(copies):
        batch = clips.clone()
        for i in range(N):
            x = batch[i]
            bits = torch.randint(0, 2, (4,), generator=g).tolist()
            if bits[0]:
                x = x.flip(-1)
            if bits[1]:
                x = x.flip(-2)
            if bits[2] and H == W:
                x = x.transpose(-1, -2)
            if bits[3]:
                x = x.flip(0)
            batch[i] = x[:, torch.randperm(C, generator=g)]
        out.append(batch)
    return torch.cat(out)


def training_pairs(vqvae: MosoVQVAE, clips: torch.Tensor, cfg: MosoConfig) -> TokenPairs:
    """Token pairs for stage two, with the configured number of augmented copies."""
    tc = cfg.transformer_train
    return encode_pairs(vqvae, augment_clips(clips, tc.augment_copies, tc.seed), cfg.transformer.K)


@dataclass
class StageTwoReport:
    so: float = 0.0
    motion: float = 0.0
    total: float = 0.0
    masked: int = 0

    def as_dict(self):
        return asdict(self)


def so_loss(models: TokenModels, cond: TokenBundle, target: TokenBundle) -> torch.Tensor:
    """Per-position cross-entropy of the clip's scene/object tokens given the condition's."""
    logits = models.so_g.forward_so(cond.scene, cond.object)
    labels = torch.cat([target.scene.flatten(1), target.object.flatten(1)], 1)
    return F.cross_entropy(logits.reshape(-1, logits.shape[-1]), labels.reshape(-1))


def motion_loss(models: TokenModels, masked_motion: torch.Tensor, mask: torch.Tensor,
                guidance: torch.Tensor, target_motion: torch.Tensor):
    """Cross-entropy over masked positions only; ``None`` when nothing is masked."""
    if not mask.any():
        return None
    logits = models.motion(masked_motion, guidance)
    return F.cross_entropy(logits[mask], target_motion[mask])


def _lr_lambda(warmup: int, total: int, scheduler: str):
    def fn(step):
        if warmup and step < warmup:
            return (step + 1) / warmup
        if scheduler == "constant":
            return 1.0
        progress = min(step - warmup, total - warmup) / max(total - warmup, 1)
        return 0.5 * (1 + math.cos(math.pi * progress))
    return fn


class TransformerTrainer:
    """Trains the shared scene/object/guidance model and the motion model jointly.

    Guidance is computed from the clip's own scene/object tokens during
    training. Motion tokens of frames ``1..K`` stay visible as fixed
    positions; they come from the pseudo video, which agrees with the clip
    there by construction of the working pools. With the unconditional
    variant, a share of each batch swaps every conditioning token for the
    mask symbol and masks all ``T`` frames.
    """

    def __init__(self, cfg: MosoConfig, grid_shapes: dict, vocab: int, models: TokenModels | None = None):
        self.cfg = cfg
        tc = cfg.transformer_train
        torch.manual_seed(tc.seed)
        n_t = pool_partition(cfg.vqvae.T, cfg.transformer.K, cfg.transformer.c)
        if n_t != cfg.vqvae.N_t:
            logger.warning("stage one uses N_t=%d but K=%d, c=%d call for N_t=%d; pseudo-video motion tokens "
                           "of the given frames may differ from the clip's", cfg.vqvae.N_t, cfg.transformer.K,
                           cfg.transformer.c, n_t)
        self.models = models if models is not None else TokenModels(cfg.transformer, vocab, grid_shapes)
        self.optimizer = torch.optim.AdamW(self.models.parameters(), lr=tc.learning_rate, betas=(0.9, 0.95),
                                           weight_decay=0.01)
        self.scheduler = torch.optim.lr_scheduler.LambdaLR(
            self.optimizer, _lr_lambda(tc.warmup_steps, tc.total_steps, tc.scheduler))
        self.generator = torch.Generator().manual_seed(tc.seed)
        self.step = 0

    @property
    def uncond_prob(self) -> float:
        if not self.cfg.transformer.unconditional:
            return 0.0
        return self.cfg.transformer_train.uncond_prob or 1.0

    def losses(self, pairs: TokenPairs):
        K = self.cfg.transformer.K
        mask_id = self.models.mask_id
        target, cond = pairs.target, pairs.pseudo.clone()
        B = len(pairs)
        uncond = torch.rand(B, generator=self.generator) < self.uncond_prob
        if uncond.any():
            cond.scene[uncond] = mask_id
            cond.object[uncond] = mask_id
        l_so = so_loss(self.models, cond, target)

        guidance = self.models.so_g.forward_g(target.scene, target.object)
        r = torch.rand(B, generator=self.generator)
        # fixed frames carry the pseudo video's tokens, identical to the clip's on 1..K
        motion = target.motion.clone()
        motion[:, :K] = pairs.pseudo.motion[:, :K]
        masked, mask = mask_for_training(motion, K, r, mask_id, self.generator)
        if uncond.any():
            masked_u, mask_u = mask_for_training(motion, 0, r, mask_id, self.generator)
            sel = uncond.view(-1, 1, 1, 1)
            masked, mask = torch.where(sel, masked_u, masked), torch.where(sel, mask_u, mask)
        l_m = motion_loss(self.models, masked, mask, guidance, target.motion)
        total = l_so if l_m is None else l_so + l_m
        return {"so": l_so, "motion": l_m, "total": total, "masked": int(mask.sum())}

    def train_step(self, pairs: TokenPairs) -> StageTwoReport:
        self.models.train()
        terms = self.losses(pairs)
        if not torch.isfinite(terms["total"]):
            raise FloatingPointError(f"non-finite stage-two loss at step {self.step}")
        self.optimizer.zero_grad(set_to_none=True)
        terms["total"].backward()
        torch.nn.utils.clip_grad_norm_(self.models.parameters(), 1.0)
        self.optimizer.step()
        self.scheduler.step()
        self.step += 1
        m = terms["motion"]
        return StageTwoReport(float(terms["so"].detach()), float("nan") if m is None else float(m.detach()),
                              float(terms["total"].detach()), terms["masked"])

    def save(self, path) -> str:
        return save_transformer(path, self.models, self.cfg, self.step)


def save_transformer(path, models: TokenModels, cfg: MosoConfig, step: int = 0) -> str:
    extra = {"vocab": models.vocab, "grid_shapes": {k: list(v) for k, v in models.grid_shapes.items()}}
    return save_checkpoint(path, module_arrays(models, "models."), cfg.to_dict(), step, kind="transformer", extra=extra)


def load_transformer(path, cfg: MosoConfig | None = None):
    ckpt = load_checkpoint(path)
    cfg = cfg or config_from_dict(ckpt.config)
    models = TokenModels(cfg.transformer, ckpt.extra["vocab"], ckpt.extra["grid_shapes"])
    load_into(models, ckpt.arrays, "models.")
    models.eval()
    return models, cfg


def fit_transformer(cfg: MosoConfig, pairs: TokenPairs, vocab: int, grid_shapes: dict, out_dir=None,
                    steps: int | None = None, trainer: TransformerTrainer | None = None, log=None):
    """Train stage two on precomputed token pairs; logs JSON lines and checkpoints to ``out_dir``."""
    tc = cfg.transformer_train
    trainer = trainer or TransformerTrainer(cfg, grid_shapes, vocab)
    steps = tc.total_steps if steps is None else steps
    out_dir = Path(out_dir) if out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    log_fh = open(out_dir / "transformer_metrics.jsonl", "a") if out_dir else None
    rng = np.random.default_rng(tc.seed)
    bs = min(tc.batch_size, len(pairs))
    order, pos = rng.permutation(len(pairs)), 0
    try:
        while trainer.step < steps:
            if pos + bs > len(order):
                order, pos = rng.permutation(len(pairs)), 0
            report = trainer.train_step(pairs.select(torch.as_tensor(order[pos:pos + bs])))
            pos += bs
            if trainer.step % tc.log_every == 0 or trainer.step == steps:
                record = {"step": trainer.step, **report.as_dict()}
                if log_fh:
                    log_fh.write(json.dumps(record) + "\n")
                    log_fh.flush()
                (log or logger.info)(" ".join(f"{k}={v:.5g}" if isinstance(v, float) else f"{k}={v}"
                                              for k, v in record.items()))
            if out_dir and (trainer.step % tc.checkpoint_every == 0 or trainer.step == steps):
                trainer.save(out_dir / "transformer.ckpt")
    finally:
        if log_fh:
            log_fh.close()
    return trainer

"""Stage-one training loop."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .config import MosoConfig
from .io import load_checkpoint, load_into, module_arrays, save_checkpoint
from .losses import (ImageDiscriminator, PerceptualPyramid, VideoDiscriminator, adversarial_losses,
                     commitment_loss, neg_ssim_loss, reconstruction_l2)
from .vqvae import COMPONENTS, MosoVQVAE

logger = logging.getLogger(__name__)


@dataclass
class LossReport:
    l2: float = 0.0
    perceptual: float = 0.0
    commit: float = 0.0
    neg_ssim: float = 0.0
    adv_g: float = 0.0
    adv_d: float = 0.0
    total: float = 0.0

    def as_dict(self):
        return asdict(self)


def lr_lambda(scheduler: str, total_steps: int):
    if scheduler == "constant":
        return lambda step: 1.0
    return lambda step: 0.5 * (1 + math.cos(math.pi * min(step, total_steps) / max(total_steps, 1)))


class VQVAETrainer:
    """Owns the model, optimizers and schedule position for stage one.

    ``total`` in each :class:`LossReport` is the generator objective: the
    weighted sum of l2, perceptual, commit, neg_ssim (when enabled) and
    adv_g (once the discriminator is active). ``adv_d`` is the separate
    discriminator objective and is reported only.
    """

    def __init__(self, cfg: MosoConfig, model: MosoVQVAE | None = None, perceptual: PerceptualPyramid | None = None):
        self.cfg = cfg
        tc = cfg.vqvae_train
        torch.manual_seed(tc.seed)
        self.model = model if model is not None else MosoVQVAE(cfg.vqvae, cfg.decompose)
        self.perceptual = perceptual if perceptual is not None else PerceptualPyramid(cfg.vqvae.C)
        self.optimizer = torch.optim.Adam(self.model.parameters(), lr=tc.learning_rate, betas=(0.5, 0.9))
        self.scheduler = torch.optim.lr_scheduler.LambdaLR(self.optimizer, lr_lambda(tc.scheduler, tc.total_steps))
        self.video_disc = VideoDiscriminator(cfg.vqvae.C) if tc.use_video_disc else None
        self.image_disc = ImageDiscriminator(cfg.vqvae.C) if tc.use_image_disc else None
        disc_params = [p for d in (self.video_disc, self.image_disc) if d is not None for p in d.parameters()]
        self.disc_optimizer = torch.optim.Adam(disc_params, lr=tc.learning_rate, betas=(0.5, 0.9)) if disc_params else None
        self.generator = torch.Generator().manual_seed(tc.seed)
        self.step = 0

    @property
    def use_preproc(self) -> bool:
        return self.step < self.cfg.vqvae_train.preproc_handoff_step

    @property
    def disc_active(self) -> bool:
        return self.disc_optimizer is not None and self.step >= self.cfg.vqvae_train.discriminator_start_step

    @torch.no_grad()
    def _maybe_init_codebooks(self, x):
        if all(bool(book.initialized) for book, _ in self.model.books().values()):
            return
        raw = self.model.encode_features(x, self.use_preproc)
        for book, comps in self.model.books().values():
            if not bool(book.initialized):
                feats = torch.cat([raw[k].movedim(-3, -1).reshape(-1, book.dim) for k in comps])
                book.init_from(feats, self.generator)

    def losses(self, x: torch.Tensor, out: dict):
        tc = self.cfg.vqvae_train
        terms = {"l2": reconstruction_l2(x, out["recon"])}
        terms["perceptual"] = self.perceptual(x, out["recon"]) if tc.perceptual_weight > 0 else x.new_zeros(())
        terms["commit"] = commitment_loss(out["raw"], out["quantized"], reduction=tc.commit_reduction)
        terms["neg_ssim"] = neg_ssim_loss(x, out["recon"]) if tc.use_neg_ssim else x.new_zeros(())
        total = (terms["l2"] + tc.perceptual_weight * terms["perceptual"] + tc.commit_weight * terms["commit"]
                 + (tc.ssim_weight * terms["neg_ssim"] if tc.use_neg_ssim else 0))
        terms["adv_g"], terms["adv_d"] = x.new_zeros(()), x.new_zeros(())
        if self.disc_active:
            for disc, weight in ((self.video_disc, tc.adv_weight), (self.image_disc, tc.image_adv_weight)):
                if disc is None:
                    continue
                g, d = adversarial_losses(x, out["recon"], disc)
                total = total + weight * g
                terms["adv_g"] = terms["adv_g"] + g
                terms["adv_d"] = terms["adv_d"] + d
        terms["total"] = total
        return terms

    def train_step(self, x: torch.Tensor) -> LossReport:
        """One optimizer step on a ``(B, T, C, H, W)`` batch."""
        self.model.train()
        self._maybe_init_codebooks(x)
        out = self.model(x, use_preproc=self.use_preproc)
        terms = self.losses(x, out)
        if not torch.isfinite(terms["total"]):
            detail = {k: float(torch.as_tensor(v).detach()) for k, v in terms.items()}
            raise FloatingPointError(f"non-finite loss at step {self.step}: {detail}")
        self.optimizer.zero_grad(set_to_none=True)
        if self.disc_optimizer is not None:
            self.disc_optimizer.zero_grad(set_to_none=True)
        terms["total"].backward()
        if self.cfg.vqvae_train.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(self.model.parameters(), self.cfg.vqvae_train.grad_clip)
        self.optimizer.step()
        self.scheduler.step()
        if self.disc_active:
            # the generator pass left grads on the critics; only adv_d should drive them
            self.disc_optimizer.zero_grad(set_to_none=True)
            terms["adv_d"].backward()
            self.disc_optimizer.step()
        for book, comps in self.model.books().values():
            feats = torch.cat([out["raw"][k].detach().movedim(-3, -1).reshape(-1, book.dim) for k in comps])
            toks = torch.cat([out["tokens"][k].reshape(-1) for k in comps])
            book.ema_update(feats, toks, self.generator)
        self.step += 1
        return LossReport(**{k: float(v.detach()) for k, v in terms.items()})

    # -- persistence -----------------------------------------------------
    def state_arrays(self) -> dict:
        arrays = module_arrays(self.model, "model.")
        for name, disc in (("video_disc.", self.video_disc), ("image_disc.", self.image_disc)):
            if disc is not None:
                arrays.update(module_arrays(disc, name))
        return arrays

    def save(self, path) -> str:
        return save_checkpoint(path, self.state_arrays(), self.cfg.to_dict(), self.step, kind="vqvae")

    def load(self, path):
        ckpt = load_checkpoint(path)
        load_into(self.model, ckpt.arrays, "model.")
        self.step = ckpt.step
        return ckpt


def save_vqvae(path, model: MosoVQVAE, cfg: MosoConfig, step: int = 0) -> str:
    return save_checkpoint(path, module_arrays(model, "model."), cfg.to_dict(), step, kind="vqvae")


def load_vqvae(path, cfg: MosoConfig | None = None):
    """Rebuild a stage-one model from a checkpoint (using its config snapshot unless ``cfg`` is given)."""
    from .config import config_from_dict

    ckpt = load_checkpoint(path)
    cfg = cfg or config_from_dict(ckpt.config)
    model = MosoVQVAE(cfg.vqvae, cfg.decompose)
    load_into(model, ckpt.arrays, "model.")
    model.eval()
    return model, cfg


def batches(clips: torch.Tensor, batch_size: int, seed: int):
    """Endless stream of random mini-batches from an in-memory ``(N, T, C, H, W)`` tensor."""
    rng = np.random.default_rng(seed)
    while True:
        order = rng.permutation(len(clips))
        for i in range(0, len(order) - batch_size + 1, batch_size):
            yield clips[torch.as_tensor(order[i:i + batch_size])]


def fit_vqvae(cfg: MosoConfig, clips: torch.Tensor, out_dir=None, steps: int | None = None,
              trainer: VQVAETrainer | None = None, log=None) -> VQVAETrainer:
    """Train stage one on ``clips``; writes a JSON-lines metrics log and checkpoints to ``out_dir``."""
    tc = cfg.vqvae_train
    trainer = trainer or VQVAETrainer(cfg)
    steps = tc.total_steps if steps is None else steps
    out_dir = Path(out_dir) if out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    log_fh = open(out_dir / "vqvae_metrics.jsonl", "a") if out_dir else None
    stream = batches(clips, min(tc.batch_size, len(clips)), tc.seed)
    try:
        while trainer.step < steps:
            report = trainer.train_step(next(stream))
            if trainer.step % tc.log_every == 0 or trainer.step == steps:
                record = {"step": trainer.step, **report.as_dict()}
                if log_fh:
                    log_fh.write(json.dumps(record) + "\n")
                    log_fh.flush()
                (log or logger.info)(" ".join(f"{k}={v:.5g}" if isinstance(v, float) else f"{k}={v}"
                                              for k, v in record.items()))
            if out_dir and (trainer.step % tc.checkpoint_every == 0 or trainer.step == steps):
                trainer.save(out_dir / "vqvae.ckpt")
    finally:
        if log_fh:
            log_fh.close()
    return trainer

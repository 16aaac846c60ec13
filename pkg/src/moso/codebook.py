"""Shared discrete codebook: nearest-neighbour quantization and EMA updates."""

from __future__ import annotations

import torch
from torch import nn


class _StraightThrough(torch.autograd.Function):
    @staticmethod
    def forward(ctx, raw, quantized):
        return quantized.detach().clone()

    @staticmethod
    def backward(ctx, grad):
        return grad, None


def straight_through(raw: torch.Tensor, quantized: torch.Tensor) -> torch.Tensor:
    """Forward returns ``quantized`` exactly; backward routes the gradient to ``raw``.

    Equivalent to ``sg(quantized - raw) + raw`` but without the rounding error
    that expression introduces in the forward value.
    """
    if raw.shape != quantized.shape:
        raise ValueError(f"shape mismatch: raw {tuple(raw.shape)} vs quantized {tuple(quantized.shape)}")
    return _StraightThrough.apply(raw, quantized)


class Codebook(nn.Module):
    """N entries of dimension D, trained only by exponential moving averages.

    Entries live in buffers rather than parameters so no optimizer can touch
    them. ``ema_cluster_size`` holds the raw (unsmoothed) EMA counts.
    """

    def __init__(self, num_entries: int, dim: int, decay: float = 0.99, eps: float = 1e-5,
                 dead_threshold: float = 1.0, dead_patience: int = 50):
        super().__init__()
        if num_entries < 1 or dim < 1:
            raise ValueError("codebook needs at least one entry of dimension >= 1")
        if not 0 <= decay < 1:
            raise ValueError(f"decay must lie in [0, 1), got {decay}")
        self.num_entries = num_entries
        self.dim = dim
        self.decay = decay
        self.eps = eps
        self.dead_threshold = dead_threshold
        self.dead_patience = dead_patience
        entries = torch.randn(num_entries, dim)
        self.register_buffer("entries", entries)
        self.register_buffer("ema_cluster_size", torch.ones(num_entries))
        self.register_buffer("ema_embed_sum", entries.clone())
        self.register_buffer("dead_steps", torch.zeros(num_entries, dtype=torch.long))
        self.register_buffer("initialized", torch.tensor(False))

    def extra_repr(self):
        return f"num_entries={self.num_entries}, dim={self.dim}, decay={self.decay}"

    def nearest(self, flat: torch.Tensor) -> torch.Tensor:
        """Index of the closest entry for each row of ``flat`` (lowest index on ties).

        Distances come from the expanded form ``|z|^2 - 2 z.e + |e|^2``. Rows
        whose two best candidates are closer than the expansion's rounding
        bound are re-resolved with exact ``sum((e - z)^2)`` distances.
        """
        e = self.entries.to(flat.dtype)
        z2 = (flat * flat).sum(1, keepdim=True)
        e2 = (e * e).sum(1)
        dist = z2 - 2 * flat @ e.t() + e2
        if self.num_entries == 1:
            return torch.zeros(flat.shape[0], dtype=torch.long, device=flat.device)
        best2 = torch.topk(dist, 2, dim=1, largest=False).values
        tol = 4 * (self.dim + 2) * torch.finfo(flat.dtype).eps * (z2.squeeze(1) + e2.max())
        ambiguous = (best2[:, 1] - best2[:, 0]) <= tol
        idx = dist.argmin(1)
        if ambiguous.any():
            rows = ambiguous.nonzero().squeeze(1)
            for chunk in rows.split(max(1, 2 ** 20 // (self.num_entries * self.dim))):
                exact = ((e.unsqueeze(0) - flat[chunk].unsqueeze(1)) ** 2).sum(-1)
                idx[chunk] = exact.argmin(1)
        return idx

    def quantize(self, feature: torch.Tensor):
        """Map a ``(..., D)`` feature grid to ``(quantized, tokens)``."""
        if feature.shape[-1] != self.dim:
            raise ValueError(f"feature dimension {feature.shape[-1]} does not match codebook dimension {self.dim}")
        flat = feature.detach().reshape(-1, self.dim)
        tokens = self.nearest(flat).reshape(feature.shape[:-1])
        return self.lookup(tokens).to(feature.dtype), tokens

    def lookup(self, tokens: torch.Tensor) -> torch.Tensor:
        tokens = torch.as_tensor(tokens, device=self.entries.device)
        if tokens.numel() and (tokens.min() < 0 or tokens.max() >= self.num_entries):
            raise IndexError(f"token index out of range [0, {self.num_entries})")
        return self.entries[tokens.long()]

    def smoothed_cluster_size(self) -> torch.Tensor:
        n = self.ema_cluster_size.sum()
        return (self.ema_cluster_size + self.eps) / (n + self.num_entries * self.eps) * n

    @torch.no_grad()
    def init_from(self, features: torch.Tensor, generator: torch.Generator | None = None):
        """Seed entries with randomly chosen feature vectors."""
        flat = features.detach().reshape(-1, self.dim).to(self.entries.dtype)
        pick = torch.randint(0, flat.shape[0], (self.num_entries,), generator=generator)
        self.entries.copy_(flat[pick])
        self.ema_embed_sum.copy_(flat[pick])
        self.ema_cluster_size.fill_(1.0)
        self.initialized.fill_(True)

    @torch.no_grad()
    def ema_update(self, features: torch.Tensor, tokens: torch.Tensor,
                   generator: torch.Generator | None = None):
        """One EMA step of counts, sums and entries from a batch of assignments."""
        flat = features.detach().reshape(-1, self.dim).to(self.entries.dtype)
        tokens = tokens.reshape(-1).long()
        if tokens.numel() != flat.shape[0]:
            raise ValueError("tokens and features disagree in the number of positions")
        if tokens.numel() and (tokens.min() < 0 or tokens.max() >= self.num_entries):
            raise IndexError(f"token index out of range [0, {self.num_entries})")
        counts = torch.bincount(tokens, minlength=self.num_entries).to(flat.dtype)
        sums = torch.zeros_like(self.ema_embed_sum).index_add_(0, tokens, flat)
        self.ema_cluster_size.mul_(self.decay).add_(counts, alpha=1 - self.decay)
        self.ema_embed_sum.mul_(self.decay).add_(sums, alpha=1 - self.decay)
        self.entries.copy_(self.ema_embed_sum / self.smoothed_cluster_size().unsqueeze(1))
        if self.dead_patience > 0:
            self._restart_dead(flat, generator)

    def _restart_dead(self, flat, generator):
        dead = self.smoothed_cluster_size() < self.dead_threshold
        self.dead_steps.add_(dead.long()).mul_(dead.long())
        expired = (self.dead_steps >= self.dead_patience).nonzero().squeeze(1)
        if expired.numel() == 0 or flat.shape[0] == 0:
            return
        pick = torch.randint(0, flat.shape[0], (expired.numel(),), generator=generator)
        self.entries[expired] = flat[pick]
        self.ema_embed_sum[expired] = flat[pick]
        self.ema_cluster_size[expired] = 1.0
        self.dead_steps[expired] = 0

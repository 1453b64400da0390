"""Concept codebook: cosine-softmax assignment, straight-through selection, EMA prototypes."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .stopgrad import sg

LOG_CLAMP = 1e-7


class Codebook(nn.Module):
    """K concepts, each a unit prototype ``alpha_k`` plus compatibility parameters ``p_k``.

    ``alpha`` is a buffer moved only by the EMA update; ``p`` is trained by
    gradient through the compatibility losses.
    """

    def __init__(self, num_concepts: int, dim: int, p_dim: int, tau: float = 0.1, c_ema: float = 0.9):
        super().__init__()
        if num_concepts < 1:
            raise ValueError("need at least one concept")
        if tau <= 0:
            raise ValueError("tau must be positive")
        if not 0 < c_ema < 1:
            raise ValueError("c_ema must lie in (0, 1)")
        self.tau = tau
        self.c_ema = c_ema
        self.register_buffer("alpha", F.normalize(torch.randn(num_concepts, dim), dim=-1))
        self.p = nn.Parameter(0.02 * torch.randn(num_concepts, p_dim))

    @property
    def num_concepts(self) -> int:
        return self.alpha.shape[0]

    def assign(self, z):
        return assign(z, self.alpha, self.tau)

    @torch.no_grad()
    def ema_update(self, latents, assignments):
        self.alpha.copy_(ema_update(self.alpha, latents, assignments, self.c_ema))


def assign(z: torch.Tensor, alpha: torch.Tensor, tau: float):
    """Soft assignment probabilities (..., K) and hard index (...,).

    Prototypes enter as constants. Ties go to the lowest index.
    """
    logits = F.cosine_similarity(z.unsqueeze(-2), sg(alpha), dim=-1) / tau
    probs = logits.softmax(-1)
    # torch.argmax returns the first maximal index
    idx = sg(logits.argmax(-1))
    return probs, idx


def straight_through_select(probs, idx, alpha, p):
    """Hard-selected (alpha, p) in the forward pass, soft-mixture gradient backward.

    The hard value is added to ``soft - sg(soft)``, which is exactly zero in
    the forward pass, so the output is bit-identical to ``alpha[idx]``.
    Gradients reach only ``probs``; the prototypes and parameters are
    stopped.
    """
    a_const, p_const = sg(alpha), sg(p)
    soft_a = probs @ a_const
    soft_p = probs @ p_const
    alpha_eff = a_const[idx] + (soft_a - sg(soft_a))
    p_eff = p_const[idx] + (soft_p - sg(soft_p))
    return alpha_eff, p_eff


def ema_update(alpha: torch.Tensor, latents: torch.Tensor, assignments: torch.Tensor, c_ema: float) -> torch.Tensor:
    """Pull each used prototype toward the normalized mean of its latents.

    Concepts with no assigned latents, or whose assigned latents average to
    the zero vector, are returned unchanged.
    """
    latents = latents.reshape(-1, latents.shape[-1]).to(alpha.dtype)
    assignments = assignments.reshape(-1)
    K = alpha.shape[0]
    sums = torch.zeros_like(alpha).index_add_(0, assignments, latents)
    counts = torch.bincount(assignments, minlength=K).to(alpha.dtype)
    mean = sums / counts.clamp(min=1)[:, None]
    norm = mean.norm(dim=-1)
    ok = (counts > 0) & (norm > 0)
    zbar = mean / norm.clamp(min=torch.finfo(alpha.dtype).tiny)[:, None]
    moved = F.normalize(c_ema * alpha + (1 - c_ema) * zbar, dim=-1)
    return torch.where(ok[:, None], moved, alpha)


def assignment_entropy_loss(probs, assignments, mask=None, k_mode: str = "active"):
    """Mean over concepts of the mean -log p(assigned concept) of their states.

    ``k_mode="active"`` averages over concepts that own at least one state
    in the batch; ``"all"`` divides by the full codebook size.
    """
    K = probs.shape[-1]
    if mask is None:
        mask = torch.ones(assignments.shape, dtype=torch.bool, device=probs.device)
    picked = probs.gather(-1, assignments.unsqueeze(-1)).squeeze(-1)
    nll = -torch.log(picked.clamp(LOG_CLAMP, 1 - LOG_CLAMP))
    onehot = F.one_hot(assignments, K).to(probs.dtype) * mask.unsqueeze(-1).to(probs.dtype)
    onehot = onehot.reshape(-1, K)
    counts = onehot.sum(0)
    per_concept = (onehot * nll.reshape(-1, 1)).sum(0) / counts.clamp(min=1)
    active = counts > 0
    denom = active.sum() if k_mode == "active" else K
    return per_concept[active].sum() / denom

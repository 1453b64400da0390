"""Causal state encoder, spherical time-step embedding and state decoder."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass
class EncoderConfig:
    hidden_dim: int = 32
    num_layers: int = 2
    num_heads: int = 2
    max_len: int = 160
    time_coef: float = 0.2  # A

    def __post_init__(self):
        if self.hidden_dim % self.num_heads:
            raise ValueError("hidden_dim must be divisible by num_heads")
        if self.time_coef <= 0:
            raise ValueError("time_coef must be positive")


class CausalSelfAttention(nn.Module):
    def __init__(self, dim: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        B, T, C = x.shape
        q, k, v = self.qkv(x).split(C, dim=-1)
        q, k, v = (u.view(B, T, self.n_heads, C // self.n_heads).transpose(1, 2) for u in (q, k, v))
        att = (q @ k.transpose(-2, -1)) / math.sqrt(C // self.n_heads)
        causal = torch.ones(T, T, dtype=torch.bool, device=x.device).tril()
        att = att.masked_fill(~causal, float("-inf")).softmax(-1)
        y = (att @ v).transpose(1, 2).reshape(B, T, C)
        return self.proj(y)


class Block(nn.Module):
    # pre-norm residual block
    def __init__(self, dim: int, n_heads: int, ff_mult: int = 4):
        super().__init__()
        self.ln1 = nn.LayerNorm(dim)
        self.attn = CausalSelfAttention(dim, n_heads)
        self.ln2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, ff_mult * dim), nn.GELU(), nn.Linear(ff_mult * dim, dim))

    def forward(self, x):
        x = x + self.attn(self.ln1(x))
        return x + self.mlp(self.ln2(x))


class CausalTransformer(nn.Module):
    """Maps a (B, T, in_dim) sequence to (B, T, out_dim); output t sees inputs <= t only."""

    def __init__(self, in_dim: int, out_dim: int, dim: int, n_layers: int, n_heads: int, max_len: int):
        super().__init__()
        self.max_len = max_len
        self.inp = nn.Linear(in_dim, dim)
        self.pos = nn.Embedding(max_len, dim)
        self.blocks = nn.ModuleList(Block(dim, n_heads) for _ in range(n_layers))
        self.ln_f = nn.LayerNorm(dim)
        self.out = nn.Linear(dim, out_dim)
        nn.init.normal_(self.pos.weight, std=0.02)

    def forward(self, x: torch.Tensor, positions: torch.Tensor | None = None) -> torch.Tensor:
        T = x.shape[1]
        if positions is None:
            positions = torch.arange(T, device=x.device).expand(x.shape[0], T)
        if int(positions.max()) >= self.max_len:
            raise ValueError(
                f"timestep {int(positions.max())} exceeds positional capacity {self.max_len}; "
                "raise max_len or shorten the window"
            )
        h = self.inp(x) + self.pos(positions)
        for blk in self.blocks:
            h = blk(h)
        return self.out(self.ln_f(h))


def time_angle(t, T, A: float):
    """Embedding angle for 0-based step ``t`` of a length-``T`` trajectory."""
    return (2.0 * (t + 1) / T - 1.0) * math.pi / (2.0 + 2.0 * A)


def time_embed(z: torch.Tensor, t: torch.Tensor, T: torch.Tensor, A: float) -> torch.Tensor:
    """Lift unit vectors ``z`` (..., M) onto the unit sphere in M+1 dims by time.

    ``t`` is the 0-based step and ``T`` the full trajectory length, broadcast
    against ``z.shape[:-1]``. The angle stays inside +-pi/(2+2A), so the
    original feature is never fully suppressed.
    """
    t = torch.as_tensor(t, device=z.device)
    T = torch.as_tensor(T, device=z.device)
    if bool((T <= 0).any()):
        raise ValueError("trajectory length T must be positive")
    theta = time_angle(t.to(z.dtype), T.to(z.dtype), A)
    theta = theta.expand(z.shape[:-1]).unsqueeze(-1)
    return torch.cat([torch.sin(theta), torch.cos(theta) * z], dim=-1)


class StateEncoder(nn.Module):
    """z_t from s_t and the (state, action) pairs strictly before t.

    Token t is [s_t, a_{t-1}] (a_{-1} = 0), so a causal transformer over the
    tokens sees exactly s_{<=t} and a_{<t}.
    """

    def __init__(self, state_dim: int, action_dim: int, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.net = CausalTransformer(
            state_dim + action_dim, cfg.hidden_dim, cfg.hidden_dim, cfg.num_layers, cfg.num_heads, cfg.max_len
        )

    def forward(self, states, prev_actions, positions, lengths):
        """Returns (raw_z, z): unit latents and their time-embedded lift."""
        h = self.net(torch.cat([states, prev_actions], dim=-1), positions)
        raw_z = F.normalize(h, dim=-1, eps=1e-12)
        z = time_embed(raw_z, positions, lengths[:, None], self.cfg.time_coef)
        return raw_z, z


class StateDecoder(nn.Module):
    """Reconstructs s_t from the assigned concept vectors alpha_{<=t}."""

    def __init__(self, concept_dim: int, state_dim: int, cfg: EncoderConfig):
        super().__init__()
        self.concept_dim = concept_dim
        self.net = CausalTransformer(
            concept_dim, state_dim, cfg.hidden_dim, cfg.num_layers, cfg.num_heads, cfg.max_len
        )

    def forward(self, concepts, positions=None):
        if concepts.shape[-1] != self.concept_dim:
            raise ValueError(f"concept vectors have dim {concepts.shape[-1]}, expected {self.concept_dim}")
        return self.net(concepts, positions)

"""Learned heads: key-state predictor, hyper-network compatibility function, gradient-fed policy."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .encoder import CausalTransformer


@dataclass
class HyperNetConfig:
    num_hidden_layers: int = 1  # H
    hidden_width: int = 32  # W_c; also the probe length
    hn_hidden: int = 64
    tau: float = 0.1

    @property
    def p_dim(self) -> int:
        return (self.num_hidden_layers + 1) * self.hidden_width


class HyperNet(nn.Module):
    """Decodes a compressed vector p into a small tanh MLP scoring states.

    p is split into H+1 segments of length W_c. Segment i < H goes through its
    own first-stage layer, then a shared second-stage layer that emits the
    flattened weight matrix and bias of hidden layer i. The last segment is a
    probe; the score is sigmoid(cos(final hidden feature, probe) / tau).
    """

    def __init__(self, state_dim: int, cfg: HyperNetConfig):
        super().__init__()
        self.cfg = cfg
        self.state_dim = state_dim
        W = cfg.hidden_width
        self.in_dims = [state_dim] + [W] * (cfg.num_hidden_layers - 1)
        self.max_in = max(self.in_dims)
        self.first = nn.ModuleList(nn.Linear(W, cfg.hn_hidden) for _ in range(cfg.num_hidden_layers))
        self.shared = nn.Linear(cfg.hn_hidden, self.max_in * W + W)
        # keep generated layers at roughly unit gain on standardized inputs
        nn.init.normal_(self.shared.weight, std=1.0 / cfg.hn_hidden**0.5 / self.max_in**0.5)
        nn.init.zeros_(self.shared.bias)

    def generate(self, p: torch.Tensor):
        """List of (W_i, b_i) with W_i shaped (..., W_c, in_i)."""
        cfg = self.cfg
        if p.shape[-1] != cfg.p_dim:
            raise ValueError(f"compressed parameter vector has length {p.shape[-1]}, expected {cfg.p_dim}")
        W = cfg.hidden_width
        segs = p.unflatten(-1, (cfg.num_hidden_layers + 1, W))
        layers = []
        for i, (lin, d_in) in enumerate(zip(self.first, self.in_dims)):
            flat = self.shared(torch.tanh(lin(segs[..., i, :])))
            w = flat[..., : self.max_in * W].unflatten(-1, (W, self.max_in))[..., :d_in]
            layers.append((w, flat[..., self.max_in * W:]))
        return layers, segs[..., -1, :]

    def hidden(self, p, s):
        layers, probe = self.generate(p)
        h = s
        for w, b in layers:
            h = torch.tanh((w * h.unsqueeze(-2)).sum(-1) + b)
        return h, probe

    def score_all(self, p_all, s):
        """Scores of every concept on every state: (K, L_p) x (..., D_s) -> (K, ...)."""
        layers, probe = self.generate(p_all)
        lead = s.shape[:-1]
        h = s.reshape(-1, s.shape[-1])
        for w, b in layers:
            h = torch.tanh(torch.einsum("kwd,knd->knw", w, h.expand(len(w), *h.shape[-2:])) + b[:, None, :])
        cos = torch.nn.functional.cosine_similarity(h, probe[:, None, :], dim=-1)
        return torch.sigmoid(cos / self.cfg.tau).reshape(len(p_all), *lead)

    def forward(self, p, s):
        """Compatibility score in (0, 1); ``p`` and ``s`` broadcast over leading dims."""
        if s.shape[-1] != self.state_dim:
            raise ValueError(f"state has dim {s.shape[-1]}, expected {self.state_dim}")
        h, probe = self.hidden(p, s)
        h, probe = torch.broadcast_tensors(h, probe)
        return torch.sigmoid(F.cosine_similarity(h, probe, dim=-1) / self.cfg.tau)


def compat_grad(hypernet: HyperNet, p, s, create_graph: bool = True):
    """d score / d s at ``s``; differentiable w.r.t. ``p`` and the hyper-network."""
    with torch.enable_grad():
        s = s.detach().requires_grad_(True)
        score = hypernet(p, s)
        (g,) = torch.autograd.grad(score.sum(), s, create_graph=create_graph)
    return g


@dataclass
class HeadConfig:
    dim: int = 32
    num_layers: int = 1
    num_heads: int = 2
    max_len: int = 160


class KeyStatePredictor(nn.Module):
    """Predicts the imminent key state from s_t, alpha_t and the causal history.

    Token t is [s_t, alpha_t, a_{t-1}], so the output at t sees
    (s_u, a_u, alpha_u) for u < t plus the current state and concept.
    """

    def __init__(self, state_dim: int, concept_dim: int, action_dim: int, cfg: HeadConfig):
        super().__init__()
        self.net = CausalTransformer(
            state_dim + concept_dim + action_dim, state_dim, cfg.dim, cfg.num_layers, cfg.num_heads, cfg.max_len
        )

    def forward(self, states, concepts, prev_actions, positions=None):
        return self.net(torch.cat([states, concepts, prev_actions], dim=-1), positions)


class GradientPolicy(nn.Module):
    """Predicts a_t from s_t, the compatibility gradient g_t and past (s, a, g)."""

    def __init__(self, state_dim: int, action_dim: int, cfg: HeadConfig):
        super().__init__()
        self.net = CausalTransformer(
            2 * state_dim + action_dim, action_dim, cfg.dim, cfg.num_layers, cfg.num_heads, cfg.max_len
        )

    def forward(self, states, grads, prev_actions, positions=None):
        return self.net(torch.cat([states, grads, prev_actions], dim=-1), positions)

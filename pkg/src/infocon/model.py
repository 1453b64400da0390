"""The full concept-discovery network and its batched data plumbing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .codebook import Codebook, straight_through_select
from .config import ModelConfig
from .encoder import EncoderConfig, StateDecoder, StateEncoder
from .heads import GradientPolicy, HeadConfig, HyperNet, HyperNetConfig, KeyStatePredictor
from .stopgrad import sg
from .synthdata import Dataset, normalize_dataset


class InfoConModel(nn.Module):
    def __init__(self, state_dim: int, action_dim: int, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.state_dim = state_dim
        self.action_dim = action_dim
        M = cfg.hidden_dim
        concept_dim = M + 1
        enc = EncoderConfig(M, cfg.encoder_layers, cfg.num_heads, cfg.max_len, cfg.time_coef)
        dec = EncoderConfig(M, cfg.decoder_layers, cfg.num_heads, cfg.max_len, cfg.time_coef)
        self.hn_cfg = HyperNetConfig(cfg.compat_hidden_layers, cfg.compat_width, cfg.hypernet_hidden, cfg.tau)
        self.encoder = StateEncoder(state_dim, action_dim, enc)
        self.decoder = StateDecoder(concept_dim, state_dim, dec)
        self.codebook = Codebook(cfg.num_concepts, concept_dim, self.hn_cfg.p_dim, cfg.tau, cfg.c_ema)
        self.hypernet = HyperNet(state_dim, self.hn_cfg)
        self.genhead = KeyStatePredictor(
            state_dim, concept_dim, action_dim, HeadConfig(M, cfg.gen_layers, cfg.num_heads, cfg.max_len)
        )
        self.policy = GradientPolicy(state_dim, action_dim, HeadConfig(M, cfg.policy_layers, cfg.num_heads, cfg.max_len))

    def encode(self, batch: "Batch"):
        return self.encoder(batch.states, batch.prev_actions, batch.positions, batch.lengths)

    def select(self, probs, idx):
        """Straight-through concept vectors, plus a direct path into the selected ``p``.

        The direct term ``p[idx] - sg(p[idx])`` is zero in value; it lets the
        compatibility losses train ``p_k`` while the straight-through part
        carries the selection gradient to the encoder.
        """
        cb = self.codebook
        alpha_eff, p_eff = straight_through_select(probs, idx, cb.alpha, cb.p)
        p_sel = cb.p[idx]
        return alpha_eff, p_eff + (p_sel - sg(p_sel))

    @torch.no_grad()
    def label(self, batch: "Batch") -> torch.Tensor:
        _, z = self.encode(batch)
        return self.codebook.assign(z)[1]


@dataclass
class Batch:
    states: torch.Tensor  # (B, L, D_s)
    actions: torch.Tensor  # (B, L, D_a)
    prev_actions: torch.Tensor  # (B, L, D_a)
    positions: torch.Tensor  # (B, L) absolute 0-based timesteps
    lengths: torch.Tensor  # (B,) full trajectory lengths
    mask: torch.Tensor  # (B, L) valid positions
    rows: np.ndarray  # (B,) trajectory indices into the store
    starts: np.ndarray  # (B,) window starts

    @property
    def covers_full(self) -> bool:
        """True when every window spans its whole trajectory."""
        n_valid = self.mask.sum(1).cpu().numpy()
        return bool(np.all(self.starts == 0) and np.all(n_valid == self.lengths.cpu().numpy()))


class TrajectoryStore:
    """Normalized trajectories padded into dense arrays for fast batching."""

    def __init__(self, dataset: Dataset, dtype=torch.float32):
        ds = normalize_dataset(dataset)
        self.dataset = ds
        self.dtype = dtype
        self.lengths = np.array([len(t) for t in ds.trajectories])
        N, Tm = len(ds), int(self.lengths.max())
        self.states = np.zeros((N, Tm, ds.state_dim))
        self.actions = np.zeros((N, Tm, ds.action_dim))
        for i, tr in enumerate(ds.trajectories):
            self.states[i, : len(tr)] = tr.states
            self.actions[i, : len(tr)] = tr.actions
        self.prev_actions = np.zeros_like(self.actions)
        self.prev_actions[:, 1:] = self.actions[:, :-1]

    def __len__(self):
        return len(self.lengths)

    def batch(self, rows, starts=None, window: int | None = None) -> Batch:
        rows = np.asarray(rows)
        lengths = self.lengths[rows]
        starts = np.zeros(len(rows), dtype=np.int64) if starts is None else np.asarray(starts)
        window = int(lengths.max()) if window is None else window
        n_valid = np.minimum(window, lengths - starts)
        L = int(n_valid.max())
        pos = starts[:, None] + np.arange(L)[None, :]
        mask = np.arange(L)[None, :] < n_valid[:, None]
        pos = np.where(mask, pos, 0)
        r = rows[:, None]
        t = lambda a: torch.as_tensor(a[r, pos] * mask[..., None], dtype=self.dtype)  # noqa: E731
        return Batch(
            states=t(self.states),
            actions=t(self.actions),
            prev_actions=t(self.prev_actions),
            positions=torch.as_tensor(pos, dtype=torch.long),
            lengths=torch.as_tensor(lengths, dtype=torch.long),
            mask=torch.as_tensor(mask),
            rows=rows,
            starts=starts,
        )

    def full(self, rows) -> Batch:
        return self.batch(rows)

    def sample(self, rng: np.random.Generator, batch_size: int, window: int) -> Batch:
        rows = rng.integers(0, len(self), size=batch_size)
        span = np.maximum(self.lengths[rows] - window, 0)
        starts = np.floor(rng.random(batch_size) * (span + 1)).astype(np.int64)
        return self.batch(rows, starts, window)

    def gather_states(self, rows, abs_index: torch.Tensor) -> torch.Tensor:
        idx = abs_index.cpu().numpy()
        return torch.as_tensor(self.states[np.asarray(rows)[:, None], idx], dtype=self.dtype)


def key_state_targets(labels: torch.Tensor, lengths: torch.Tensor | None = None) -> torch.Tensor:
    """For each step, the index of the last step of its concept run.

    ``labels`` is (T,) or (B, T); positions at or beyond ``lengths`` are
    padding and end the final run at ``length - 1``.
    """
    squeeze = labels.dim() == 1
    if squeeze:
        labels = labels[None]
    B, T = labels.shape
    if lengths is None:
        lengths = torch.full((B,), T, dtype=torch.long)
    ar = torch.arange(T)
    change = torch.zeros(B, T, dtype=torch.bool)
    change[:, :-1] = labels[:, 1:] != labels[:, :-1]
    change |= ar[None, :] >= (lengths[:, None] - 1)
    ends = torch.where(change, ar[None, :].expand(B, T), torch.full((B, T), T))
    out = ends.flip(1).cummin(1).values.flip(1)
    out = torch.minimum(out, lengths[:, None] - 1)
    return out[0] if squeeze else out

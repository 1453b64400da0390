"""Labeling, HIS, activation statistics, segmentation baselines and the key-state-guided policy."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .encoder import CausalTransformer
from .model import InfoConModel, TrajectoryStore
from .synthdata import Dataset, SyntheticTaskSpec, env_step, rollout_success, sample_initial_state
from .training import label_store, make_optimizer, set_threads


class LabelError(Exception):
    pass


@dataclass
class LabelSet:
    concept_ids: list[np.ndarray]
    key_times: list[np.ndarray]
    model_id: str = ""

    def __len__(self):
        return len(self.key_times)

    def to_json(self) -> dict:
        return {
            "model_id": self.model_id,
            "trajectories": [
                {"concept_ids": c.tolist(), "key_times": k.tolist()} for c, k in zip(self.concept_ids, self.key_times)
            ],
        }

    @classmethod
    def from_json(cls, d: dict) -> "LabelSet":
        trajs = d["trajectories"]
        return cls(
            concept_ids=[np.asarray(t.get("concept_ids", []), dtype=np.int64) for t in trajs],
            key_times=[np.asarray(t["key_times"], dtype=np.int64) for t in trajs],
            model_id=d.get("model_id", ""),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), separators=(",", ":")))

    @classmethod
    def load(cls, path: str | Path) -> "LabelSet":
        try:
            return cls.from_json(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError, KeyError, TypeError) as e:
            raise LabelError(f"{path}: cannot read label set ({e})") from None


def run_ends(ids) -> np.ndarray:
    """Last index of every run of equal consecutive ids."""
    ids = np.asarray(ids)
    if len(ids) == 0:
        raise ValueError("empty label sequence")
    return np.append(np.flatnonzero(ids[1:] != ids[:-1]), len(ids) - 1)


def labels_from_ids(concept_ids: list[np.ndarray], model_id: str = "") -> LabelSet:
    ids = [np.asarray(c, dtype=np.int64) for c in concept_ids]
    return LabelSet(ids, [run_ends(c) for c in ids], model_id)


def label_dataset(dataset: Dataset, model: InfoConModel, model_id: str = "") -> LabelSet:
    """Partition every trajectory with the trained encoder and codebook."""
    if dataset.state_dim != model.state_dim:
        raise LabelError(f"state_dim mismatch: dataset has {dataset.state_dim}, checkpoint expects {model.state_dim}")
    if dataset.action_dim != model.action_dim:
        raise LabelError(f"action_dim mismatch: dataset has {dataset.action_dim}, checkpoint expects {model.action_dim}")
    longest = max(len(t) for t in dataset.trajectories)
    if longest > model.cfg.max_len:
        raise LabelError(f"trajectory length {longest} exceeds the checkpoint's max_len {model.cfg.max_len}")
    model.eval()
    ids = label_store(model, TrajectoryStore(dataset))
    return labels_from_ids(ids, model_id)


# -- metrics -----------------------------------------------------------------

def his(pred_keys, gt_keys, T: int) -> int:
    """Summed delay from each ground-truth key to the first predicted key at or after it.

    A ground-truth key with no predicted key after it is charged against T-1.
    """
    pred = np.sort(np.asarray(pred_keys, dtype=np.int64))
    if len(pred) == 0:
        raise ValueError("pred_keys must not be empty")
    gt = np.asarray(gt_keys, dtype=np.int64)
    pos = np.searchsorted(pred, gt, side="left")
    nxt = np.where(pos < len(pred), pred[np.minimum(pos, len(pred) - 1)], T - 1)
    return int((nxt - gt).sum())


@dataclass
class HisReport:
    per_trajectory: list[int]
    per_key_mean: list[float]
    total: int
    mean_per_trajectory: float
    mean_per_key: float

    def to_json(self) -> dict:
        return {
            "per_trajectory": self.per_trajectory,
            "per_key_mean": self.per_key_mean,
            "total": self.total,
            "mean_per_trajectory": self.mean_per_trajectory,
            "mean_per_key": self.mean_per_key,
        }


def his_report(labels: LabelSet, dataset: Dataset) -> HisReport:
    if len(labels) != len(dataset):
        raise LabelError(f"label set covers {len(labels)} trajectories, dataset has {len(dataset)}")
    sums, means = [], []
    for keys, tr in zip(labels.key_times, dataset.trajectories):
        if tr.gt_key_times is None:
            raise LabelError("dataset trajectories carry no ground-truth key times")
        h = his(keys, tr.gt_key_times, len(tr))
        sums.append(h)
        means.append(h / len(tr.gt_key_times))
    return HisReport(sums, means, int(sum(sums)), float(np.mean(sums)), float(np.mean(means)))


def activation_rates(labels: LabelSet, num_concepts: int) -> np.ndarray:
    """Fraction of trajectories in which each concept appears at least once."""
    if len(labels) == 0:
        raise ValueError("empty label set")
    hits = np.zeros(num_concepts)
    for ids in labels.concept_ids:
        hits[np.unique(ids)] += 1
    return hits / len(labels)


# -- baselines -----------------------------------------------------------------

def baseline_last_state(dataset: Dataset) -> LabelSet:
    return LabelSet(
        [np.zeros(len(t), dtype=np.int64) for t in dataset.trajectories],
        [np.array([len(t) - 1]) for t in dataset.trajectories],
        "baseline:last",
    )


def uniform_keys(T: int, k: int) -> np.ndarray:
    if k < 1 or k > T:
        raise ValueError(f"k must lie in [1, T={T}], got {k}")
    return np.array([round((j + 1) * T / k) - 1 for j in range(k)], dtype=np.int64)


def _ids_from_keys(keys: np.ndarray, T: int) -> np.ndarray:
    ids = np.zeros(T, dtype=np.int64)
    for j, k in enumerate(keys[:-1]):
        ids[k + 1:] = j + 1
    return ids


def baseline_uniform(dataset: Dataset, k: int) -> LabelSet:
    keys = [uniform_keys(len(t), k) for t in dataset.trajectories]
    ids = [_ids_from_keys(kk, len(t)) for kk, t in zip(keys, dataset.trajectories)]
    return LabelSet(ids, keys, f"baseline:uniform:{k}")


def segment_costs(states: np.ndarray) -> np.ndarray:
    """cost[i, j]: squared deviation of states i..j from the chord between s_i and s_j."""
    T = len(states)
    cost = np.zeros((T, T))
    for i in range(T):
        for j in range(i + 1, T):
            frac = (np.arange(i, j + 1) - i) / (j - i)
            chord = states[i] + frac[:, None] * (states[j] - states[i])
            cost[i, j] = ((states[i: j + 1] - chord) ** 2).sum()
    return cost


def linear_dp_keys(states: np.ndarray, k: int) -> tuple[np.ndarray, float]:
    """Best k key times (last is T-1) for a piecewise-linear fit, and its residual.

    Breakpoints b_1 < ... < b_{k-1} are chosen from [0, T-2]; the fit
    interpolates linearly on [0, b_1], [b_1, b_2], ..., [b_{k-1}, T-1].
    """
    T = len(states)
    if k < 1 or k > T:
        raise ValueError(f"k must lie in [1, T={T}], got {k}")
    cost = segment_costs(np.asarray(states, dtype=np.float64))
    # best[m, j]: minimal cost covering 0..j with m pieces, the last ending at j;
    # the first piece may be the single point 0 (breakpoint at 0)
    best = np.full((k + 1, T), np.inf)
    arg = np.zeros((k + 1, T), dtype=np.int64)
    best[1] = cost[0]
    for m in range(2, k + 1):
        for j in range(1, T):
            cand = best[m - 1, :j] + cost[:j, j]
            i = int(np.argmin(cand))
            best[m, j], arg[m, j] = cand[i], i
    keys, j = [T - 1], T - 1
    for m in range(k, 1, -1):
        j = int(arg[m, j])
        keys.append(j)
    keys = np.array(sorted(keys), dtype=np.int64)
    return keys, float(best[k, T - 1])


def baseline_linear_dp(dataset: Dataset, k: int) -> LabelSet:
    keys = [linear_dp_keys(t.states, k)[0] for t in dataset.trajectories]
    ids = [_ids_from_keys(kk, len(t)) for kk, t in zip(keys, dataset.trajectories)]
    return LabelSet(ids, keys, f"baseline:lindp:{k}")


# -- key-state-guided policy -------------------------------------------------

@dataclass
class PolicyConfig:
    dim: int = 32
    num_layers: int = 1
    num_heads: int = 2
    max_len: int = 160
    iters: int = 1500
    batch_size: int = 32
    lr: float = 1e-3
    weight_decay: float = 1e-3
    warmup_iters: int = 100
    min_lr_ratio: float = 0.1
    key_weight: float = 1.0  # 0 gives the unguided twin
    seed: int = 0


class GuidedPolicy(nn.Module):
    """Causal sequence policy that first predicts the next key state, then the action.

    One trunk, two heads. The key-state prediction is fed to the action head,
    so supervision of the key state shapes the action pathway; with
    ``key_weight=0`` the same network trains on actions alone.
    """

    def __init__(self, state_dim: int, action_dim: int, cfg: PolicyConfig):
        super().__init__()
        self.cfg = cfg
        self.trunk = CausalTransformer(state_dim + action_dim, cfg.dim, cfg.dim, cfg.num_layers, cfg.num_heads, cfg.max_len)
        self.key_head = nn.Linear(cfg.dim, state_dim)
        self.act_head = nn.Sequential(nn.Linear(cfg.dim + 2 * state_dim, cfg.dim), nn.GELU(), nn.Linear(cfg.dim, action_dim))

    def forward(self, states, prev_actions):
        h = self.trunk(torch.cat([states, prev_actions], dim=-1))
        key = self.key_head(h)
        act = self.act_head(torch.cat([h, key, key - states], dim=-1))
        return act, key


@dataclass
class TrainedPolicy:
    net: GuidedPolicy
    state_mean: np.ndarray
    state_std: np.ndarray
    action_mean: np.ndarray
    action_std: np.ndarray
    history: list = field(default_factory=list)


def next_key_targets(key_times: np.ndarray, T: int) -> np.ndarray:
    """For each step t, the first key time >= t (T-1 past the last key)."""
    kt = np.sort(np.asarray(key_times))
    pos = np.searchsorted(kt, np.arange(T), side="left")
    return np.where(pos < len(kt), kt[np.minimum(pos, len(kt) - 1)], T - 1)


def train_guided_policy(dataset: Dataset, labels: LabelSet, cfg: PolicyConfig) -> TrainedPolicy:
    if len(labels) != len(dataset):
        raise LabelError(f"label set covers {len(labels)} trajectories, dataset has {len(dataset)}")
    set_threads()
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    store = TrajectoryStore(dataset)
    N, Tm = store.states.shape[:2]
    key_idx = np.zeros((N, Tm), dtype=np.int64)
    for i, (kt, T) in enumerate(zip(labels.key_times, store.lengths)):
        key_idx[i, :T] = next_key_targets(kt, T)
    key_states = store.states[np.arange(N)[:, None], key_idx]
    net = GuidedPolicy(dataset.state_dim, dataset.action_dim, cfg)
    opt, sched = make_optimizer(net, _OptCfg(cfg), cfg.lr, cfg.iters)
    hist = []
    for it in range(cfg.iters):
        rows = rng.integers(0, N, size=cfg.batch_size)
        T = int(store.lengths[rows].max())
        mask = torch.as_tensor(np.arange(T)[None, :] < store.lengths[rows][:, None], dtype=torch.float32)
        s = torch.as_tensor(store.states[rows, :T], dtype=torch.float32)
        pa = torch.as_tensor(store.prev_actions[rows, :T], dtype=torch.float32)
        a = torch.as_tensor(store.actions[rows, :T], dtype=torch.float32)
        ks = torch.as_tensor(key_states[rows, :T], dtype=torch.float32)
        act, key = net(s, pa)
        la = (((act - a) ** 2).sum(-1) * mask).sum() / mask.sum()
        lk = (((key - ks) ** 2).sum(-1) * mask).sum() / mask.sum()
        loss = la + cfg.key_weight * lk
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        sched.step()
        if it % 100 == 0 or it == cfg.iters - 1:
            hist.append({"iteration": it, "action": la.item(), "key": lk.item()})
    net.eval()
    ds = store.dataset
    return TrainedPolicy(net, ds.state_mean, ds.state_std, ds.action_mean, ds.action_std, hist)


@dataclass
class _OptCfg:
    pc: PolicyConfig

    @property
    def weight_decay(self):
        return self.pc.weight_decay

    @property
    def warmup_iters(self):
        return self.pc.warmup_iters

    @property
    def min_lr_ratio(self):
        return self.pc.min_lr_ratio


@torch.no_grad()
def evaluate_guided_policy(policy: TrainedPolicy, spec: SyntheticTaskSpec, n_episodes: int, seed: int) -> float:
    """Success rate over seeded fresh starts; an episode ends at success or ``max_steps``.

    All episodes are rolled out in lockstep as one batch.
    """
    rng = np.random.default_rng(seed)
    starts = np.stack([sample_initial_state(spec, rng) for _ in range(n_episodes)])
    states = [starts]
    prev = [np.zeros((n_episodes, spec.action_dim))]
    done = np.array([rollout_success(s, spec) for s in starts])
    for _ in range(spec.max_steps - 1):
        if done.all():
            break
        S = (np.stack(states, 1) - policy.state_mean) / policy.state_std
        PA = (np.stack(prev, 1) - policy.action_mean) / policy.action_std
        PA[:, 0] = 0.0
        act, _ = policy.net(torch.as_tensor(S, dtype=torch.float32), torch.as_tensor(PA, dtype=torch.float32))
        a = act[:, -1].numpy().astype(np.float64) * policy.action_std + policy.action_mean
        cur = states[-1]
        nxt = np.stack([cur[i] if done[i] else env_step(cur[i], a[i], spec) for i in range(n_episodes)])
        states.append(nxt)
        prev.append(np.where(done[:, None], 0.0, a))
        done |= np.array([rollout_success(s, spec) for s in nxt])
    return float(done.mean())

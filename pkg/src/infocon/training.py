"""Loss terms, the total objective, pretraining and the main training loop."""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np
import torch

from .checkpoint import load_state, save_model
from .codebook import LOG_CLAMP, assignment_entropy_loss
from .config import TrainConfig
from .heads import compat_grad
from .model import Batch, InfoConModel, TrajectoryStore, key_state_targets
from .synthdata import Dataset

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


def set_threads() -> None:
    torch.set_num_threads(int(os.environ.get("INFOCON_THREADS", "1")))


# -- individual loss terms -------------------------------------------------

def _traj_mean(x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean over valid steps of each trajectory, then over trajectories."""
    m = mask.to(x.dtype)
    per_traj = (x * m).sum(1) / m.sum(1).clamp(min=1)
    return per_traj.mean()


def gen_loss(pred, target, mask):
    return _traj_mean(((pred - target) ** 2).sum(-1), mask)


def action_loss(pred, actions, mask):
    return _traj_mean(((pred - actions) ** 2).sum(-1), mask)


def rec_loss(pred, states, mask, square: bool = False):
    sq = ((states - pred) ** 2).sum(-1)
    if square:
        return _traj_mean(sq, mask)
    # unsquared norm; the tiny floor keeps the gradient finite at an exact fit
    return _traj_mean(torch.sqrt(sq + 1e-24), mask)


def dis_c_loss(scores, assignments, mask, k_mode: str = "active"):
    """Class-balanced binary cross entropy of each concept's compatibility function.

    ``scores`` is (K, B, L): concept k's score on every state. Positives are
    the states assigned to k, negatives all other valid states; an empty set
    drops its term.
    """
    K = scores.shape[0]
    c = scores.clamp(LOG_CLAMP, 1 - LOG_CLAMP)
    ks = torch.arange(K).view(K, 1, 1)
    pos = (assignments.unsqueeze(0) == ks) & mask.unsqueeze(0)
    neg = (assignments.unsqueeze(0) != ks) & mask.unsqueeze(0)
    npos = pos.sum((1, 2))
    nneg = neg.sum((1, 2))
    pos_term = (torch.log(c) * pos).sum((1, 2)) / npos.clamp(min=1)
    neg_term = (torch.log(1 - c) * neg).sum((1, 2)) / nneg.clamp(min=1)
    active = npos > 0
    if k_mode == "active":
        return -(pos_term + neg_term)[active].sum() / active.sum().clamp(min=1)
    return -(pos_term + neg_term).sum() / K


# -- objective -------------------------------------------------------------

@dataclass
class StepInputs:
    batch: Batch
    key_targets: torch.Tensor  # (B, L) absolute indices of the key state of each step
    key_states: torch.Tensor  # (B, L, D_s) normalized states at those indices


def gen_active(cfg: TrainConfig, iteration: int) -> bool:
    return cfg.ablation != "dis_only" and iteration >= cfg.gen_defer_fraction * cfg.total_iters


def compute_losses(
    model: InfoConModel,
    inp: StepInputs,
    cfg: TrainConfig,
    iteration: int,
    latents: torch.Tensor | None = None,
    pretrain: bool = False,
) -> dict[str, torch.Tensor]:
    """Every loss term and their weighted total for one batch.

    Pretraining uses ``rec + lam * ent``. The main phase uses
    ``gen + dis_a + lam * (dis_c + ent) + lambda_rec * rec``, with the
    ablation switch and the generative deferral removing terms.
    """
    b = inp.batch
    if latents is None:
        _, latents = model.encode(b)
    probs, idx = model.codebook.assign(latents)
    alpha_eff, p_eff = model.select(probs, idx)
    zero = latents.new_zeros(())
    out = {"ent": assignment_entropy_loss(probs, idx, b.mask, cfg.entropy_k_mode)}
    out["rec"] = rec_loss(model.decoder(alpha_eff, b.positions), b.states, b.mask, cfg.square_rec)
    if pretrain:
        out["total"] = out["rec"] + cfg.lam * out["ent"]
        return out

    use_dis = cfg.ablation != "gen_only"
    if gen_active(cfg, iteration):
        pred = model.genhead(b.states, alpha_eff, b.prev_actions, b.positions)
        out["gen"] = gen_loss(pred, inp.key_states, b.mask)
    else:
        out["gen"] = zero
    if use_dis:
        scores = model.hypernet.score_all(model.codebook.p, b.states)
        out["dis_c"] = dis_c_loss(scores, idx, b.mask, cfg.entropy_k_mode)
        g = compat_grad(model.hypernet, p_eff, b.states, create_graph=not cfg.detach_compat_grad)
        act = model.policy(b.states, g, b.prev_actions, b.positions)
        out["dis_a"] = action_loss(act, b.actions, b.mask)
    else:
        out["dis_c"] = out["dis_a"] = zero
    out["total"] = (
        out["gen"] + out["dis_a"] + cfg.lam * (out["dis_c"] + out["ent"]) + cfg.lambda_rec * out["rec"]
    )
    return out


def build_inputs(model: InfoConModel, store: TrajectoryStore, batch: Batch, labels: torch.Tensor | None = None):
    """Key-state targets for a window batch.

    ``labels`` are the window's own assignments; they are reused when every
    window covers its whole trajectory. Otherwise the batch trajectories are
    relabeled in one gradient-free full-length pass.
    """
    if labels is not None and batch.covers_full:
        targets = key_state_targets(labels, batch.lengths)
    else:
        full = store.full(batch.rows)
        full_targets = key_state_targets(model.label(full), full.lengths)
        targets = full_targets.gather(1, batch.positions)
    targets = torch.where(batch.mask, targets, torch.zeros_like(targets))
    return StepInputs(batch, targets, store.gather_states(batch.rows, targets))


# -- optimization ----------------------------------------------------------

def lr_factor(it: int, warmup: int, total: int, min_ratio: float = 0.1) -> float:
    """Linear warm-up from ``min_ratio`` to 1, then cosine back to ``min_ratio`` at ``total - 1``."""
    if warmup > 0 and it < warmup:
        return min_ratio + (1 - min_ratio) * it / warmup
    span = max(total - 1 - warmup, 1)
    progress = min(max(it - warmup, 0) / span, 1.0)
    return min_ratio + (1 - min_ratio) * 0.5 * (1 + math.cos(math.pi * progress))


def make_optimizer(model, cfg: TrainConfig, base_lr: float, total: int):
    opt = torch.optim.AdamW(model.parameters(), lr=base_lr, weight_decay=cfg.weight_decay)
    warm = min(cfg.warmup_iters, max(total - 1, 0))
    sched = torch.optim.lr_scheduler.LambdaLR(opt, lambda it: lr_factor(it, warm, total, cfg.min_lr_ratio))
    return opt, sched


@dataclass
class TrainResult:
    model: InfoConModel
    history: list[dict] = field(default_factory=list)
    active_before_pretrain: int = 0
    active_after_pretrain: int = 0
    active_final: int = 0
    iteration: int = 0


def build_model(dataset: Dataset, cfg: TrainConfig) -> InfoConModel:
    torch.manual_seed(cfg.seed)
    return InfoConModel(dataset.state_dim, dataset.action_dim, cfg.model)


@torch.no_grad()
def label_store(model: InfoConModel, store: TrajectoryStore, chunk: int = 64) -> list[np.ndarray]:
    out = []
    for lo in range(0, len(store), chunk):
        rows = np.arange(lo, min(lo + chunk, len(store)))
        b = store.full(rows)
        idx = model.label(b).numpy()
        out += [idx[i, : store.lengths[r]] for i, r in enumerate(rows)]
    return out


def active_concepts(model: InfoConModel, store: TrajectoryStore) -> int:
    """Number of distinct concepts used anywhere in the dataset."""
    return len(np.unique(np.concatenate(label_store(model, store))))


def _check_finite(loss: torch.Tensor, it: int, phase: str):
    if not torch.isfinite(loss):
        raise TrainingDiverged(f"non-finite total loss {loss.item()} at {phase} iteration {it}")


def _step(model, store, batch, cfg, it, opt, sched, pretrain):
    _, latents = model.encode(batch)
    with torch.no_grad():
        _, idx = model.codebook.assign(latents)
        model.codebook.ema_update(latents[batch.mask], idx[batch.mask])
        # recompute with the moved prototypes
        _, idx = model.codebook.assign(latents)
    inp = build_inputs(model, store, batch, idx)
    losses = compute_losses(model, inp, cfg, it, latents=latents, pretrain=pretrain)
    _check_finite(losses["total"], it, "pretrain" if pretrain else "train")
    opt.zero_grad(set_to_none=True)
    losses["total"].backward()
    opt.step()
    sched.step()
    return {k: float(v.detach()) for k, v in losses.items()}


def pretrain(model: InfoConModel, store: TrajectoryStore, cfg: TrainConfig, rng: np.random.Generator, history=None):
    """Warm up encoder, decoder and prototypes with ``rec + lam * ent``."""
    if cfg.pretrain_iters <= 0:
        return model
    opt, sched = make_optimizer(model, cfg, cfg.pretrain_lr, cfg.pretrain_iters)
    model.train()
    for it in range(cfg.pretrain_iters):
        batch = store.sample(rng, cfg.batch_size, cfg.window_len)
        rec = _step(model, store, batch, cfg, it, opt, sched, pretrain=True)
        if history is not None and (it % cfg.log_every == 0 or it == cfg.pretrain_iters - 1):
            history.append({"phase": "pretrain", "iteration": it, **rec})
    return model


def fit(dataset: Dataset, cfg: TrainConfig, model: InfoConModel | None = None, callback=None) -> TrainResult:
    """Pretrain then train. Deterministic given ``cfg.seed``."""
    set_threads()
    store = TrajectoryStore(dataset)
    model = model or build_model(dataset, cfg)
    rng = np.random.default_rng(cfg.seed)
    torch.manual_seed(cfg.seed)
    res = TrainResult(model)
    res.active_before_pretrain = active_concepts(model, store)
    pretrain(model, store, cfg, rng, res.history)
    res.active_after_pretrain = active_concepts(model, store)
    opt, sched = make_optimizer(model, cfg, cfg.base_lr, cfg.total_iters)
    model.train()
    for it in range(cfg.total_iters):
        batch = store.sample(rng, cfg.batch_size, cfg.window_len)
        rec = _step(model, store, batch, cfg, it, opt, sched, pretrain=False)
        if it % cfg.log_every == 0 or it == cfg.total_iters - 1:
            rec = {"phase": "train", "iteration": it, "lr": sched.get_last_lr()[0], **rec}
            res.history.append(rec)
            log.debug("iter %d total %.4f", it, rec["total"])
            if callback is not None:
                callback(rec)
        res.iteration = it + 1
    model.eval()
    res.active_final = active_concepts(model, store)
    return res


@torch.no_grad()
def evaluate_loss(model: InfoConModel, dataset: Dataset, cfg: TrainConfig, iteration: int) -> float:
    """Total loss over whole trajectories of ``dataset`` (no parameter or EMA updates)."""
    store = TrajectoryStore(dataset)
    rows = np.arange(len(store))
    b = store.full(rows)
    inp = build_inputs(model, store, b)
    with torch.enable_grad():
        losses = compute_losses(model, inp, cfg, iteration)
    return float(losses["total"])


# -- checkpoints -------------------------------------------------------------

def save_checkpoint(path, model: InfoConModel, cfg: TrainConfig, iteration: int, extra: dict | None = None) -> str:
    meta = {
        "train_config": cfg.to_dict(),
        "iteration": iteration,
        "state_dim": model.state_dim,
        "action_dim": model.action_dim,
        **(extra or {}),
    }
    return save_model(path, model, meta)


def load_checkpoint(path) -> tuple[InfoConModel, TrainConfig, dict]:
    state, meta = load_state(path)
    cfg = TrainConfig.from_dict(meta["train_config"])
    model = InfoConModel(meta["state_dim"], meta["action_dim"], cfg.model)
    model.load_state_dict(state)
    model.eval()
    return model, cfg, meta

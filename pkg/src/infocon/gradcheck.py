"""Central finite-difference check of the total loss gradient, per parameter group."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
import torch

from .config import TrainConfig
from .model import InfoConModel, TrajectoryStore
from .stopgrad import StopGradTape
from .training import build_inputs, compute_losses

GROUPS = ("encoder", "decoder", "codebook", "hypernet", "genhead", "policy")


@dataclass
class GroupReport:
    name: str
    checked: int
    max_rel_err: float
    max_abs_grad: float


def rel_err(analytic: np.ndarray, numeric: np.ndarray, floor: float) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def central_difference(f, h: float, order: int = 4) -> float:
    if order == 2:
        return (f(h) - f(-h)) / (2 * h)
    return (8 * (f(h) - f(-h)) - (f(2 * h) - f(-2 * h))) / (12 * h)


def check_total_loss_gradient(
    model: InfoConModel,
    store: TrajectoryStore,
    cfg: TrainConfig,
    iteration: int,
    step: float = 1e-4,
    max_per_group: int | None = 200,
    floor: float = 1e-6,
    seed: int = 0,
    order: int = 4,
) -> list[GroupReport]:
    """Compare backprop against central differences of the loss.

    The model and store should be float64. Stop-gradient values (hard
    assignments, straight-through constants) are recorded at the base point
    and replayed for every perturbed evaluation, so the numeric derivative is
    that of the surrogate backprop differentiates. ``order`` picks the
    central stencil: 2 is the textbook (f(x+h) - f(x-h)) / 2h, 4 adds the
    +-2h points and cancels the h^2 truncation term, which otherwise
    dominates on small entries next to the tau=0.1 softmax. ``floor`` bounds the
    denominator of the relative error for entries that are essentially zero.
    The latent sequence is checked as an extra group: it is the encoder path
    through straight-through selection.
    """
    if order not in (2, 4):
        raise ValueError(f"order must be 2 or 4, got {order}")
    rng = np.random.default_rng(seed)
    batch = store.full(np.arange(len(store)))
    inp = build_inputs(model, store, batch)
    tape = StopGradTape()
    model.zero_grad(set_to_none=True)
    _, latents = model.encode(batch)
    latents.retain_grad()
    z0 = latents.detach().clone()
    with tape.record():
        total = compute_losses(model, inp, cfg, iteration, latents=latents)["total"]
    total.backward()
    z_grad = latents.grad.detach().clone()

    # values only from here on: the compat gradient needs autograd but not its graph
    eval_cfg = dataclasses.replace(cfg, detach_compat_grad=True)

    def loss_at(latent_input=None, reencode=False) -> float:
        with torch.no_grad(), tape.replay():
            lat = z0 if latent_input is None else latent_input
            if reencode:
                _, lat = model.encode(batch)
            return compute_losses(model, inp, eval_cfg, iteration, latents=lat)["total"].item()

    reports = []
    named = dict(model.named_parameters())
    for group in GROUPS:
        params = [(n, p) for n, p in named.items() if n.split(".")[0] == group]
        entries = [(p, i) for _, p in params for i in range(p.numel())]
        if max_per_group is not None and len(entries) > max_per_group:
            pick = rng.choice(len(entries), size=max_per_group, replace=False)
            entries = [entries[j] for j in sorted(pick)]
        an, nu = [], []
        for p, i in entries:
            flat = p.data.view(-1)
            orig = flat[i].item()

            def f(x):
                flat[i] = orig + x
                return loss_at(reencode=group == "encoder")

            nu.append(central_difference(f, step, order))
            flat[i] = orig
            g = p.grad
            an.append(0.0 if g is None else g.view(-1)[i].item())
        an, nu = np.array(an), np.array(nu)
        errs = rel_err(an, nu, floor)
        reports.append(GroupReport(group, len(entries), float(errs.max()), float(np.abs(an).max())))

    # latent (encoder-output) path
    flat_idx = np.arange(z0.numel())
    if max_per_group is not None and len(flat_idx) > max_per_group:
        flat_idx = np.sort(rng.choice(len(flat_idx), size=max_per_group, replace=False))
    an, nu = [], []
    for i in flat_idx:
        zp = z0.clone().view(-1)
        base = zp[i].item()

        def f(x):
            zp[i] = base + x
            return loss_at(zp.view_as(z0))

        nu.append(central_difference(f, step, order))
        an.append(z_grad.view(-1)[i].item())
    an, nu = np.array(an), np.array(nu)
    reports.append(GroupReport("latents", len(flat_idx), float(rel_err(an, nu, floor).max()), float(np.abs(an).max())))
    return reports

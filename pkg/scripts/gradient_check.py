"""Finite-difference check of the total loss gradient on the tiny configuration.

Usage: python scripts/gradient_check.py [--step 1e-4] [--max-per-group N]
"""

import argparse
import time

import torch

from infocon.config import tiny_config
from infocon.gradcheck import check_total_loss_gradient
from infocon.model import TrajectoryStore
from infocon.synthdata import PhaseSpec, SyntheticTaskSpec, generate_dataset
from infocon.training import build_model


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--step", type=float, default=1e-4)
    ap.add_argument("--max-per-group", type=int, default=None)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    # one short phase keeps trajectories near T=12
    spec = SyntheticTaskSpec(
        phases=(PhaseSpec((0.55, 0.55), (0.6, 0.6), 0.04, 0.07, 0.01),),
        max_steps=16,
        start_low=(-0.05, -0.05),
        start_high=(0.05, 0.05),
    )
    ds = generate_dataset(spec, 4, seed=1)
    cfg = tiny_config()
    torch.manual_seed(args.seed)
    model = build_model(ds, cfg).double()
    store = TrajectoryStore(ds, dtype=torch.float64)
    t0 = time.time()
    reports = check_total_loss_gradient(model, store, cfg, cfg.total_iters - 1, args.step, args.max_per_group)
    for r in reports:
        print(f"{r.name:10s} checked {r.checked:5d}  max rel err {r.max_rel_err:.2e}  max |grad| {r.max_abs_grad:.2e}")
    print(f"{time.time() - t0:.1f}s")


if __name__ == "__main__":
    main()

"""Train on the standard 3-phase fixture and compare the learned key states with ground truth.

Usage:
    python scripts/segmentation_experiment.py --seeds 0 1 2 --variant all
    python scripts/segmentation_experiment.py --seeds 0 --set total_iters=2000 --set model.time_coef=1.0

Prints per-seed HIS (mean per ground-truth key), the uniform and
piecewise-linear baselines, activation rates and a few label strings.
"""

import argparse
import json
import time

import numpy as np

from infocon.config import TrainConfig
from infocon.evallab import activation_rates, baseline_linear_dp, baseline_uniform, his_report, label_dataset
from infocon.synthdata import generate_dataset, standard_spec
from infocon.training import fit


def apply_overrides(cfg: TrainConfig, items) -> TrainConfig:
    d = cfg.to_dict()
    for item in items:
        key, _, raw = item.partition("=")
        target = d
        *path, leaf = key.split(".")
        for p in path:
            target = target[p]
        target[leaf] = json.loads(raw) if raw not in ("all", "gen_only", "dis_only", "active") else raw
    return TrainConfig.from_dict(d)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--variant", choices=("all", "gen_only", "dis_only", "no_pretrain"), default="all")
    ap.add_argument("--n", type=int, default=200)
    ap.add_argument("--noise", type=float, default=0.01)
    ap.add_argument("--set", action="append", default=[], help="config override, e.g. lam=0.01")
    ap.add_argument("--show", type=int, default=3, help="label strings to print per seed")
    args = ap.parse_args()

    rows = []
    for seed in args.seeds:
        ds = generate_dataset(standard_spec(args.noise), args.n, seed)
        cfg = apply_overrides(TrainConfig(seed=seed), args.set)
        if args.variant in ("gen_only", "dis_only"):
            cfg.ablation = args.variant
        elif args.variant == "no_pretrain":
            cfg.pretrain_iters = 0
        t0 = time.time()
        res = fit(ds, cfg)
        elapsed = time.time() - t0
        labels = label_dataset(ds, res.model)
        k = ds.spec.num_phases
        row = {
            "seed": seed,
            "his": his_report(labels, ds).mean_per_key,
            "uniform": his_report(baseline_uniform(ds, k), ds).mean_per_key,
            "lindp": his_report(baseline_linear_dp(ds, k), ds).mean_per_key,
            "keys": float(np.mean([len(kt) for kt in labels.key_times])),
            "rates": activation_rates(labels, cfg.model.num_concepts).round(2).tolist(),
            "active": [res.active_before_pretrain, res.active_after_pretrain, res.active_final],
            "time_s": round(elapsed, 1),
        }
        rows.append(row)
        print(json.dumps(row))
        for tr, ids in list(zip(ds.trajectories, labels.concept_ids))[: args.show]:
            print("  gt", tr.gt_key_times.tolist(), "".join(str(int(i)) for i in ids))
    print(
        "mean HIS %.3f  uniform %.3f  lindp %.3f  keys %.2f"
        % tuple(np.mean([r[c] for r in rows]) for c in ("his", "uniform", "lindp", "keys"))
    )


if __name__ == "__main__":
    main()

"""Key-state-guided policy against its unguided twin on the standard fixture.

Labels come from a freshly trained model (``--labels model``) or from the
ground-truth phases (``--labels gt``), which bounds what guidance can add.

Usage: python scripts/policy_experiment.py --seeds 0 1 2 --labels model
"""

import argparse
import json
import time

import numpy as np

from infocon.config import TrainConfig
from infocon.evallab import PolicyConfig, evaluate_guided_policy, label_dataset, labels_from_ids, train_guided_policy
from infocon.synthdata import generate_dataset, standard_spec
from infocon.training import fit


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--labels", choices=("model", "gt"), default="model")
    ap.add_argument("--episodes", type=int, default=100)
    ap.add_argument("--iters", type=int, default=PolicyConfig.iters)
    args = ap.parse_args()

    gaps = []
    for seed in args.seeds:
        ds = generate_dataset(standard_spec(), 200, seed)
        if args.labels == "gt":
            labels = labels_from_ids([t.gt_phase for t in ds.trajectories], "gt")
        else:
            labels = label_dataset(ds, fit(ds, TrainConfig(seed=seed)).model)
        t0 = time.time()
        out = {"seed": seed}
        for name, kw in (("guided", 1.0), ("unguided", 0.0)):
            pol = train_guided_policy(ds, labels, PolicyConfig(seed=seed, iters=args.iters, key_weight=kw))
            out[name] = evaluate_guided_policy(pol, ds.spec, args.episodes, seed=1000 + seed)
            out[name + "_final_losses"] = pol.history[-1]
        out["time_s"] = round(time.time() - t0, 1)
        gaps.append(out["guided"] - out["unguided"])
        print(json.dumps(out))
    print(f"mean guided - unguided: {100 * np.mean(gaps):+.1f} pp")


if __name__ == "__main__":
    main()

"""Command-line entry point: ``infocon <command> ...``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 divergence.
Every command writes one run manifest next to its main output.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .checkpoint import CheckpointError, file_hash
from .config import TrainConfig
from .evallab import (
    LabelError,
    LabelSet,
    PolicyConfig,
    activation_rates,
    baseline_last_state,
    baseline_linear_dp,
    baseline_uniform,
    evaluate_guided_policy,
    his_report,
    label_dataset,
    train_guided_policy,
)
from .synthdata import DatasetError, SyntheticTaskSpec, generate_dataset, load_dataset, save_dataset, standard_spec
from .training import TrainingDiverged, fit, load_checkpoint, save_checkpoint

log = logging.getLogger("infocon")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _hash_path(p: Path) -> str:
    """Hash of a file, or of a directory's files in name order."""
    h = hashlib.sha256()
    files = sorted(p.iterdir()) if p.is_dir() else [p]
    for f in files:
        if f.is_file():
            h.update(f.name.encode())
            h.update(f.read_bytes())
    return h.hexdigest()[:16]


def _manifest_path(out: Path) -> Path:
    return out / "manifest.json" if out.is_dir() else Path(str(out) + ".manifest.json")


def write_manifest(command, args, out: Path, t0: float, config=None, outputs=(), seed=None, extra=None):
    man = {
        "command": command,
        "argv": {k: v for k, v in vars(args).items() if k != "func"},
        "config": config,
        "seed": seed,
        "inputs": {k: str(getattr(args, k)) for k in ("data", "ckpt", "labels", "config", "spec") if getattr(args, k, None)},
        "outputs": [str(o) for o in outputs],
        "wall_time_s": round(time.time() - t0, 3),
        "artifact_hashes": {str(o): _hash_path(Path(o)) for o in outputs if Path(o).exists()},
        **(extra or {}),
    }
    _manifest_path(out).write_text(json.dumps(man, indent=2, sort_keys=True, default=str))


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True))


# -- commands ----------------------------------------------------------------

def cmd_gen_data(args) -> int:
    t0 = time.time()
    if args.n < 1:
        raise UsageError("--n must be at least 1")
    if args.spec:
        try:
            spec = SyntheticTaskSpec.from_dict(json.loads(Path(args.spec).read_text()))
        except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise DatasetError(f"{args.spec}: invalid task spec ({e})") from None
    else:
        spec = standard_spec()
    ds = generate_dataset(spec, args.n, args.seed)
    out = Path(args.out)
    save_dataset(ds, out)
    write_manifest("gen-data", args, out, t0, config=spec.to_dict(), outputs=[out], seed=args.seed)
    return EXIT_OK


def cmd_train(args) -> int:
    t0 = time.time()
    ds = load_dataset(args.data)
    try:
        cfg = TrainConfig.load(args.config) if args.config else TrainConfig()
    except (OSError, json.JSONDecodeError, TypeError, ValueError) as e:
        raise UsageError(f"{args.config}: invalid config ({e})") from None
    if args.ablate:
        cfg.ablation = args.ablate
    if args.seed is not None:
        cfg.seed = args.seed
    out = Path(args.out)
    curve = Path(str(out) + ".loss.csv")
    try:
        res = fit(ds, cfg)
    except TrainingDiverged as e:
        log.error("%s", e)
        write_manifest("train", args, out, t0, config=cfg.to_dict(), seed=cfg.seed, extra={"diverged": str(e)})
        return EXIT_DIVERGED
    digest = save_checkpoint(
        out,
        res.model,
        cfg,
        res.iteration,
        {
            "active_before_pretrain": res.active_before_pretrain,
            "active_after_pretrain": res.active_after_pretrain,
            "active_final": res.active_final,
        },
    )
    cols = ["phase", "iteration", "lr", "total", "ent", "rec", "gen", "dis_c", "dis_a"]
    with curve.open("w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=cols, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for rec in res.history:
            w.writerow({k: rec.get(k, "") for k in cols})
    write_manifest(
        "train",
        args,
        out,
        t0,
        config=cfg.to_dict(),
        outputs=[out, Path(str(out) + ".config.json"), curve],
        seed=cfg.seed,
        extra={"ablation": cfg.ablation, "checkpoint_id": digest},
    )
    return EXIT_OK


def cmd_label(args) -> int:
    t0 = time.time()
    ds = load_dataset(args.data)
    model, cfg, _ = load_checkpoint(args.ckpt)
    labels = label_dataset(ds, model, model_id=file_hash(args.ckpt))
    out = Path(args.out)
    labels.save(out)
    write_manifest("label", args, out, t0, config=cfg.to_dict(), outputs=[out], seed=cfg.seed)
    return EXIT_OK


def _baseline(ds, spec: str) -> LabelSet:
    name, _, k = spec.partition(":")
    if name == "last" and not k:
        return baseline_last_state(ds)
    if name in ("uniform", "lindp") and k.isdigit() and int(k) >= 1:
        if int(k) > min(len(t) for t in ds.trajectories):
            raise UsageError(f"--baseline {spec}: k exceeds the shortest trajectory length")
        return (baseline_uniform if name == "uniform" else baseline_linear_dp)(ds, int(k))
    raise UsageError(f"--baseline must be last, uniform:k or lindp:k, got {spec!r}")


def _summary(rep) -> dict:
    return {"mean_per_key": rep.mean_per_key, "mean_per_trajectory": rep.mean_per_trajectory, "total": rep.total}


def cmd_eval(args) -> int:
    t0 = time.time()
    ds = load_dataset(args.data)
    labels = LabelSet.load(args.labels)
    rep = his_report(labels, ds)
    num_concepts = max(int(c.max()) for c in labels.concept_ids if len(c)) + 1
    report = {
        "model_id": labels.model_id,
        "his": rep.to_json(),
        "activation_rates": activation_rates(labels, num_concepts).tolist(),
        "mean_keys_per_trajectory": float(np.mean([len(k) for k in labels.key_times])),
        "baselines": {},
        "warnings": [],
    }
    trained_on = ds.meta.get("model_id")
    if trained_on is not None and labels.model_id and trained_on != labels.model_id:
        report["warnings"].append(f"model_id mismatch: labels {labels.model_id}, dataset {trained_on}")
    if args.ckpt:
        expect = file_hash(args.ckpt)
        if labels.model_id != expect:
            report["warnings"].append(f"model_id mismatch: labels {labels.model_id}, checkpoint {expect}")
    for b in args.baseline or []:
        report["baselines"][b] = _summary(his_report(_baseline(ds, b), ds))
    out = Path(args.out)
    _dump(out, report)
    write_manifest("eval", args, out, t0, outputs=[out])
    return EXIT_OK


def cmd_policy(args) -> int:
    t0 = time.time()
    ds = load_dataset(args.data)
    labels = LabelSet.load(args.labels)
    cfg = PolicyConfig(iters=args.iters, seed=args.seed)
    guided = train_guided_policy(ds, labels, cfg)
    result = {
        "model_id": labels.model_id,
        "episodes": args.episodes,
        "guided_success": evaluate_guided_policy(guided, ds.spec, args.episodes, args.seed),
        "policy_config": asdict(cfg),
    }
    if not args.no_twin:
        twin = train_guided_policy(ds, labels, PolicyConfig(iters=args.iters, seed=args.seed, key_weight=0.0))
        result["unguided_success"] = evaluate_guided_policy(twin, ds.spec, args.episodes, args.seed)
    out = Path(args.out)
    _dump(out, result)
    write_manifest("policy", args, out, t0, config=asdict(cfg), outputs=[out], seed=args.seed)
    return EXIT_OK


PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


def render_svg(states: np.ndarray, concept_ids, key_times, gt_keys, size: int = 400) -> str:
    pos = states[:, :2]
    lo, hi = pos.min(0), pos.max(0)
    span = float(max((hi - lo).max(), 1e-9))
    pad = 20

    def xy(p):
        q = (p - lo) / span * (size - 2 * pad) + pad
        return f"{q[0]:.2f}", f"{size - q[1]:.2f}"

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
    ]
    for t in range(len(pos) - 1):
        (x1, y1), (x2, y2) = xy(pos[t]), xy(pos[t + 1])
        col = PALETTE[int(concept_ids[t]) % len(PALETTE)] if len(concept_ids) else "#000000"
        out.append(f'<line x1="{x1}" y1="{y1}" x2="{x2}" y2="{y2}" stroke="{col}" stroke-width="2"/>')
    for t in gt_keys:
        x, y = xy(pos[t])
        out.append(f'<rect x="{float(x) - 5:.2f}" y="{float(y) - 5:.2f}" width="10" height="10" fill="none" stroke="black"/>')
    for t in key_times:
        x, y = xy(pos[t])
        out.append(f'<circle cx="{x}" cy="{y}" r="3.5" fill="black"><title>{escape(f"key t={int(t)}")}</title></circle>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def cmd_plot(args) -> int:
    t0 = time.time()
    ds = load_dataset(args.data)
    labels = LabelSet.load(args.labels)
    if not 0 <= args.traj < min(len(ds), len(labels)):
        raise UsageError(f"--traj {args.traj} out of range [0, {min(len(ds), len(labels))})")
    tr = ds.trajectories[args.traj]
    gt = tr.gt_key_times if tr.gt_key_times is not None else []
    out = Path(args.out)
    out.write_text(render_svg(tr.states, labels.concept_ids[args.traj], labels.key_times[args.traj], gt))
    write_manifest("plot", args, out, t0, outputs=[out])
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="infocon")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic demonstration dataset")
    g.add_argument("--spec", help="task spec JSON (default: the standard 3-phase task)")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="pretrain and train a model")
    t.add_argument("--data", required=True)
    t.add_argument("--config", help="TrainConfig JSON (default: desk-scale defaults)")
    t.add_argument("--out", required=True)
    t.add_argument("--ablate", choices=("gen_only", "dis_only"))
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    lb = sub.add_parser("label", help="label a dataset with a trained checkpoint")
    lb.add_argument("--data", required=True)
    lb.add_argument("--ckpt", required=True)
    lb.add_argument("--out", required=True)
    lb.set_defaults(func=cmd_label)

    e = sub.add_parser("eval", help="HIS, activation rates and baselines")
    e.add_argument("--data", required=True)
    e.add_argument("--labels", required=True)
    e.add_argument("--baseline", action="append", help="last, uniform:k or lindp:k; repeatable")
    e.add_argument("--ckpt", help="checkpoint to compare the labels' model_id against")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    po = sub.add_parser("policy", help="train and roll out the key-state-guided policy")
    po.add_argument("--data", required=True)
    po.add_argument("--labels", required=True)
    po.add_argument("--out", required=True)
    po.add_argument("--iters", type=int, default=PolicyConfig.iters)
    po.add_argument("--episodes", type=int, default=100)
    po.add_argument("--seed", type=int, default=0)
    po.add_argument("--no-twin", action="store_true", help="skip the unguided twin")
    po.set_defaults(func=cmd_policy)

    pl = sub.add_parser("plot", help="SVG of one labeled trajectory")
    pl.add_argument("--data", required=True)
    pl.add_argument("--labels", required=True)
    pl.add_argument("--traj", type=int, required=True)
    pl.add_argument("--out", required=True)
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        log.error("%s", e)
        return EXIT_USAGE
    except (DatasetError, LabelError, CheckpointError) as e:
        log.error("%s", e)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

"""Synthetic multi-phase reaching trajectories with known key states.

Each task is a sequence of waypoints the agent visits in order. The state is
the agent position followed by every waypoint coordinate, so a model that sees
the state history can infer which waypoint is currently being approached.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
STD_FLOOR = 1e-6
CLIP_FACTOR = 1.5


class DatasetError(Exception):
    """Raised for corrupt or inconsistent dataset files."""


@dataclass(frozen=True)
class PhaseSpec:
    box_low: tuple[float, float]
    box_high: tuple[float, float]
    arrival_eps: float = 0.04
    action_scale: float = 0.06
    noise_sigma: float = 0.01

    def __post_init__(self):
        if self.arrival_eps <= 0:
            raise ValueError("arrival_eps must be positive")
        if self.action_scale <= 0:
            raise ValueError("action_scale must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")
        if any(lo > hi for lo, hi in zip(self.box_low, self.box_high)):
            raise ValueError("box_low must not exceed box_high")


@dataclass(frozen=True)
class SyntheticTaskSpec:
    phases: tuple[PhaseSpec, ...]
    max_steps: int = 150
    start_low: tuple[float, float] = (-0.25, -0.25)
    start_high: tuple[float, float] = (0.25, 0.25)

    def __post_init__(self):
        if len(self.phases) < 1:
            raise ValueError("need at least one phase")
        if self.max_steps < 2 * len(self.phases):
            raise ValueError("max_steps must be at least 2 * num_phases")

    @property
    def num_phases(self) -> int:
        return len(self.phases)

    @property
    def state_dim(self) -> int:
        return 2 + 2 * self.num_phases

    @property
    def action_dim(self) -> int:
        return 2

    @property
    def max_action_norm(self) -> float:
        return CLIP_FACTOR * max(ph.action_scale for ph in self.phases)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticTaskSpec":
        phases = tuple(
            PhaseSpec(
                box_low=tuple(ph["box_low"]),
                box_high=tuple(ph["box_high"]),
                arrival_eps=float(ph["arrival_eps"]),
                action_scale=float(ph["action_scale"]),
                noise_sigma=float(ph["noise_sigma"]),
            )
            for ph in d["phases"]
        )
        return cls(
            phases=phases,
            max_steps=int(d["max_steps"]),
            start_low=tuple(d.get("start_low", (-0.25, -0.25))),
            start_high=tuple(d.get("start_high", (0.25, 0.25))),
        )


def standard_spec(noise_sigma: float = 0.01) -> SyntheticTaskSpec:
    """The 3-phase fixture used by the experiments (T is roughly 60)."""
    boxes = [((0.5, 0.5), (1.0, 1.0)), ((-1.0, 0.5), (-0.5, 1.0)), ((-1.0, -1.0), (-0.5, -0.5))]
    phases = tuple(PhaseSpec(lo, hi, 0.045, 0.07, noise_sigma) for lo, hi in boxes)
    return SyntheticTaskSpec(phases=phases, max_steps=150)


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray
    actions: np.ndarray
    gt_phase: np.ndarray | None = None
    gt_key_times: np.ndarray | None = None

    def __post_init__(self):
        if self.states.ndim != 2 or self.actions.ndim != 2:
            raise ValueError("states and actions must be 2-D")
        if len(self.states) != len(self.actions):
            raise ValueError("states and actions must have the same length")
        if len(self.states) < 2:
            raise ValueError("a trajectory needs at least two steps")

    def __len__(self) -> int:
        return len(self.states)


@dataclass(frozen=True)
class Dataset:
    trajectories: list[Trajectory]
    state_mean: np.ndarray
    state_std: np.ndarray
    action_mean: np.ndarray
    action_std: np.ndarray
    spec: SyntheticTaskSpec
    normalized: bool = False
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.trajectories)

    @property
    def state_dim(self) -> int:
        return self.trajectories[0].states.shape[1]

    @property
    def action_dim(self) -> int:
        return self.trajectories[0].actions.shape[1]


def _unit(v: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(v))
    return v / n if n > 0 else np.zeros_like(v)


def _uniform(rng: np.random.Generator, low, high) -> np.ndarray:
    return rng.uniform(np.asarray(low, dtype=np.float64), np.asarray(high, dtype=np.float64))


def sample_initial_state(spec: SyntheticTaskSpec, rng: np.random.Generator) -> np.ndarray:
    pos = _uniform(rng, spec.start_low, spec.start_high)
    wps = [_uniform(rng, ph.box_low, ph.box_high) for ph in spec.phases]
    return np.concatenate([pos, *wps])


def env_step(state: np.ndarray, action: np.ndarray, spec: SyntheticTaskSpec) -> np.ndarray:
    state = np.asarray(state, dtype=np.float64)
    action = np.asarray(action, dtype=np.float64)
    if state.shape != (spec.state_dim,):
        raise ValueError(f"state has shape {state.shape}, expected ({spec.state_dim},)")
    if action.shape != (spec.action_dim,):
        raise ValueError(f"action has shape {action.shape}, expected ({spec.action_dim},)")
    norm = float(np.linalg.norm(action))
    cap = spec.max_action_norm
    if norm > cap:
        action = action * (cap / norm)
    out = state.copy()
    out[:2] = state[:2] + action
    return out


def rollout_success(final_state: np.ndarray, spec: SyntheticTaskSpec) -> bool:
    last = spec.phases[-1]
    goal = final_state[2 + 2 * (spec.num_phases - 1): 2 + 2 * spec.num_phases]
    return bool(np.linalg.norm(final_state[:2] - goal) < last.arrival_eps)


def generate_trajectory(spec: SyntheticTaskSpec, seed: int) -> Trajectory | None:
    """Roll out the scripted demonstrator; ``None`` if ``max_steps`` runs out."""
    if seed < 0:
        raise ValueError("seed must be nonnegative")
    rng = np.random.default_rng(seed)
    state = sample_initial_state(spec, rng)
    states, actions, phase_ids, key_times = [state], [], [], []
    phase = 0
    while True:
        t = len(states) - 1
        ph = spec.phases[phase]
        wp = state[2 + 2 * phase: 4 + 2 * phase]
        action = ph.action_scale * _unit(wp - state[:2]) + rng.normal(0.0, ph.noise_sigma, 2)
        actions.append(action)
        phase_ids.append(phase)
        if len(states) >= spec.max_steps:
            return None
        state = env_step(state, action, spec)
        states.append(state)
        if np.linalg.norm(state[:2] - wp) < ph.arrival_eps:
            key_times.append(t + 1)
            if phase == spec.num_phases - 1:
                break
            phase += 1
    # the final state carries a zero "done" action
    actions.append(np.zeros(2))
    phase_ids.append(spec.num_phases - 1)
    gt_phase = np.asarray(phase_ids, dtype=np.int64)
    # the arrival state still belongs to the phase it completes
    for k, kt in enumerate(key_times[:-1]):
        gt_phase[kt] = k
    return Trajectory(
        states=np.asarray(states),
        actions=np.asarray(actions),
        gt_phase=gt_phase,
        gt_key_times=np.asarray(key_times, dtype=np.int64),
    )


def generate_dataset(spec: SyntheticTaskSpec, n: int, seed: int) -> Dataset:
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    trajs = []
    while len(trajs) < n:
        traj = generate_trajectory(spec, int(rng.integers(0, 2**31 - 1)))
        if traj is not None:
            trajs.append(traj)
    return make_dataset(trajs, spec, meta={"seed": seed})


def make_dataset(trajs: list[Trajectory], spec: SyntheticTaskSpec, meta: dict | None = None) -> Dataset:
    if not trajs:
        raise ValueError("empty dataset")
    ds, da = trajs[0].states.shape[1], trajs[0].actions.shape[1]
    for tr in trajs:
        if tr.states.shape[1] != ds or tr.actions.shape[1] != da:
            raise ValueError("all trajectories must share state and action dimensions")
    s = np.concatenate([tr.states for tr in trajs])
    a = np.concatenate([tr.actions for tr in trajs])
    return Dataset(
        trajectories=list(trajs),
        state_mean=s.mean(0),
        state_std=np.maximum(s.std(0), STD_FLOOR),
        action_mean=a.mean(0),
        action_std=np.maximum(a.std(0), STD_FLOOR),
        spec=spec,
        meta=dict(meta or {}),
    )


def normalize_dataset(d: Dataset) -> Dataset:
    if d.normalized:
        return d
    trajs = [
        replace(
            tr,
            states=(tr.states - d.state_mean) / d.state_std,
            actions=(tr.actions - d.action_mean) / d.action_std,
        )
        for tr in d.trajectories
    ]
    return replace(d, trajectories=trajs, normalized=True)


def denormalize_dataset(d: Dataset) -> Dataset:
    if not d.normalized:
        return d
    trajs = [
        replace(
            tr,
            states=tr.states * d.state_std + d.state_mean,
            actions=tr.actions * d.action_std + d.action_mean,
        )
        for tr in d.trajectories
    ]
    return replace(d, trajectories=trajs, normalized=False)


# -- persistence -----------------------------------------------------------

def _floats(a: np.ndarray) -> list:
    # json writes floats with repr, i.e. shortest round-tripping form (up to 17 digits)
    return np.asarray(a, dtype=np.float64).tolist()


def save_dataset(d: Dataset, path: str | Path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for old in path.glob("traj_*.json"):
        old.unlink()
    meta = {
        "format_version": FORMAT_VERSION,
        "count": len(d),
        "normalized": d.normalized,
        "spec": d.spec.to_dict(),
        "state_mean": _floats(d.state_mean),
        "state_std": _floats(d.state_std),
        "action_mean": _floats(d.action_mean),
        "action_std": _floats(d.action_std),
        "info": d.meta,
    }
    (path / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
    for i, tr in enumerate(d.trajectories):
        rec = {"states": _floats(tr.states), "actions": _floats(tr.actions)}
        if tr.gt_phase is not None:
            rec["gt_phase"] = tr.gt_phase.tolist()
        if tr.gt_key_times is not None:
            rec["gt_key_times"] = tr.gt_key_times.tolist()
        (path / f"traj_{i:05d}.json").write_text(json.dumps(rec, separators=(",", ":")))


def _read_json(p: Path) -> dict:
    try:
        return json.loads(p.read_text())
    except FileNotFoundError:
        raise DatasetError(f"{p}: file not found") from None
    except json.JSONDecodeError as e:
        raise DatasetError(f"{p}: corrupt JSON ({e})") from None


def _array(p: Path, rec: dict, key: str, dtype, ndim: int) -> np.ndarray:
    if key not in rec:
        raise DatasetError(f"{p}: missing field '{key}'")
    try:
        arr = np.asarray(rec[key], dtype=dtype)
    except (TypeError, ValueError):
        raise DatasetError(f"{p}: field '{key}' is not a numeric array") from None
    if arr.ndim != ndim:
        raise DatasetError(f"{p}: field '{key}' has {arr.ndim} dims, expected {ndim}")
    return arr


def load_dataset(path: str | Path) -> Dataset:
    path = Path(path)
    if not path.is_dir():
        raise DatasetError(f"{path}: dataset directory not found")
    mp = path / "meta.json"
    meta = _read_json(mp)
    if meta.get("format_version") != FORMAT_VERSION:
        raise DatasetError(f"{mp}: unsupported format_version {meta.get('format_version')!r}")
    try:
        spec = SyntheticTaskSpec.from_dict(meta["spec"])
    except (KeyError, TypeError, ValueError) as e:
        raise DatasetError(f"{mp}: invalid field 'spec' ({e})") from None
    stats = {k: _array(mp, meta, k, np.float64, 1) for k in ("state_mean", "state_std", "action_mean", "action_std")}
    for k in ("state_mean", "state_std"):
        if stats[k].shape != (spec.state_dim,):
            raise DatasetError(f"{mp}: field '{k}' has length {len(stats[k])}, expected {spec.state_dim}")
    for k in ("action_mean", "action_std"):
        if stats[k].shape != (spec.action_dim,):
            raise DatasetError(f"{mp}: field '{k}' has length {len(stats[k])}, expected {spec.action_dim}")
    count = meta.get("count")
    if not isinstance(count, int) or count < 1:
        raise DatasetError(f"{mp}: invalid field 'count'")
    trajs = []
    for i in range(count):
        tp = path / f"traj_{i:05d}.json"
        rec = _read_json(tp)
        states = _array(tp, rec, "states", np.float64, 2)
        actions = _array(tp, rec, "actions", np.float64, 2)
        if states.shape[1] != spec.state_dim:
            raise DatasetError(f"{tp}: field 'states' has width {states.shape[1]}, expected {spec.state_dim}")
        if actions.shape[1] != spec.action_dim:
            raise DatasetError(f"{tp}: field 'actions' has width {actions.shape[1]}, expected {spec.action_dim}")
        if len(states) != len(actions):
            raise DatasetError(f"{tp}: fields 'states' and 'actions' differ in length")
        gt_phase = _array(tp, rec, "gt_phase", np.int64, 1) if "gt_phase" in rec else None
        gt_keys = _array(tp, rec, "gt_key_times", np.int64, 1) if "gt_key_times" in rec else None
        try:
            trajs.append(Trajectory(states, actions, gt_phase, gt_keys))
        except ValueError as e:
            raise DatasetError(f"{tp}: {e}") from None
    return Dataset(
        trajectories=trajs,
        spec=spec,
        normalized=bool(meta.get("normalized", False)),
        meta=meta.get("info", {}),
        **stats,
    )


def key_times_from_phase(gt_phase: np.ndarray) -> np.ndarray:
    """Indices where the phase id changes on the next step, plus the last index."""
    gt_phase = np.asarray(gt_phase)
    ends = np.flatnonzero(gt_phase[1:] != gt_phase[:-1])
    return np.append(ends, len(gt_phase) - 1)


def nominal_length(spec: SyntheticTaskSpec) -> float:
    """Rough expected trajectory length, for sizing windows."""
    centers = [np.add(spec.start_low, spec.start_high) / 2]
    centers += [np.add(ph.box_low, ph.box_high) / 2 for ph in spec.phases]
    return sum(
        math.dist(a, b) / ph.action_scale for a, b, ph in zip(centers[:-1], centers[1:], spec.phases)
    )

import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from infocon.synthdata import (
    DatasetError,
    PhaseSpec,
    SyntheticTaskSpec,
    denormalize_dataset,
    env_step,
    generate_dataset,
    generate_trajectory,
    Trajectory,
    key_times_from_phase,
    load_dataset,
    make_dataset,
    normalize_dataset,
    rollout_success,
    save_dataset,
    standard_spec,
)


def point_spec(noise=0.0):
    # start box collapsed onto the waypoint box
    ph = PhaseSpec((0.3, 0.3), (0.3, 0.3), 0.04, 0.06, noise)
    return SyntheticTaskSpec((ph,), max_steps=10, start_low=(0.3, 0.3), start_high=(0.3, 0.3))


def test_spec_validation():
    with pytest.raises(ValueError):
        PhaseSpec((0, 0), (1, 1), arrival_eps=0.0)
    with pytest.raises(ValueError):
        PhaseSpec((0, 0), (1, 1), action_scale=-1.0)
    with pytest.raises(ValueError):
        PhaseSpec((0, 0), (1, 1), noise_sigma=-0.1)
    with pytest.raises(ValueError):
        SyntheticTaskSpec(phases=())


def test_spec_dims_and_roundtrip():
    spec = standard_spec()
    assert spec.num_phases == 3
    assert spec.state_dim == 8
    assert spec.action_dim == 2
    assert SyntheticTaskSpec.from_dict(json.loads(json.dumps(spec.to_dict()))) == spec


def test_start_on_waypoint_gives_two_steps():
    tr = generate_trajectory(point_spec(), seed=0)
    assert len(tr) == 2
    assert tr.gt_key_times.tolist() == [1]


def test_three_phase_labels():
    tr = generate_trajectory(standard_spec(0.01), seed=7)
    assert np.all(np.diff(tr.gt_phase) >= 0)
    assert sorted(set(tr.gt_phase.tolist())) == [0, 1, 2]
    assert tr.gt_key_times[-1] == len(tr) - 1
    assert key_times_from_phase(tr.gt_phase).tolist() == tr.gt_key_times.tolist()


def test_key_times_are_arrivals():
    spec = standard_spec()
    tr = generate_trajectory(spec, seed=11)
    for k, t in enumerate(tr.gt_key_times):
        wp = tr.states[t, 2 + 2 * k: 4 + 2 * k]
        assert np.linalg.norm(tr.states[t, :2] - wp) < spec.phases[k].arrival_eps
        # no earlier arrival inside the same phase
        start = 0 if k == 0 else tr.gt_key_times[k - 1] + 1
        for u in range(start, t):
            assert np.linalg.norm(tr.states[u, :2] - wp) >= spec.phases[k].arrival_eps


def test_generation_is_deterministic():
    a = generate_trajectory(standard_spec(), seed=5)
    b = generate_trajectory(standard_spec(), seed=5)
    assert np.array_equal(a.states, b.states)
    assert np.array_equal(a.actions, b.actions)


def test_budget_exhaustion_returns_none():
    ph = PhaseSpec((5.0, 5.0), (5.0, 5.0), 0.01, 0.05, 0.0)
    spec = SyntheticTaskSpec((ph,), max_steps=5)
    assert generate_trajectory(spec, seed=0) is None


def test_env_step_clips_and_keeps_waypoints():
    spec = standard_spec()
    s = np.arange(8, dtype=float) / 10
    out = env_step(s, np.array([10.0, 0.0]), spec)
    assert np.isclose(out[0] - s[0], spec.max_action_norm)
    assert np.array_equal(out[2:], s[2:])
    with pytest.raises(ValueError):
        env_step(s, np.zeros(3), spec)


@given(st.floats(-1, 1), st.floats(-1, 1))
def test_env_step_norm_bound(ax, ay):
    spec = standard_spec()
    s = np.zeros(8)
    out = env_step(s, np.array([ax, ay]), spec)
    assert np.linalg.norm(out[:2]) <= spec.max_action_norm + 1e-12


def test_rollout_success():
    spec = standard_spec()
    s = np.zeros(8)
    s[6:8] = [0.2, 0.1]
    s[:2] = s[6:8]
    assert rollout_success(s, spec)
    s[0] += 1.0
    assert not rollout_success(s, spec)


def test_dataset_roundtrip(tmp_path, small_dataset):
    save_dataset(small_dataset, tmp_path / "d")
    files = sorted(p.name for p in (tmp_path / "d").iterdir())
    assert files[0] == "meta.json" and len(files) == len(small_dataset) + 1
    back = load_dataset(tmp_path / "d")
    for a, b in zip(small_dataset.trajectories, back.trajectories):
        assert np.array_equal(a.states, b.states)
        assert np.array_equal(a.actions, b.actions)
        assert np.array_equal(a.gt_key_times, b.gt_key_times)
    assert np.array_equal(back.state_mean, small_dataset.state_mean)
    save_dataset(back, tmp_path / "e")
    for p in (tmp_path / "d").iterdir():
        assert p.read_bytes() == (tmp_path / "e" / p.name).read_bytes()


def test_corrupt_dataset_names_field(tmp_path, small_dataset):
    save_dataset(small_dataset, tmp_path)
    rec = json.loads((tmp_path / "traj_00002.json").read_text())
    del rec["actions"]
    (tmp_path / "traj_00002.json").write_text(json.dumps(rec))
    with pytest.raises(DatasetError, match="traj_00002.json.*actions"):
        load_dataset(tmp_path)
    with pytest.raises(DatasetError):
        load_dataset(tmp_path / "missing")


def test_normalization_roundtrip(small_dataset):
    n = normalize_dataset(small_dataset)
    s = np.concatenate([t.states for t in n.trajectories])
    assert np.allclose(s.mean(0), 0, atol=1e-9)
    back = denormalize_dataset(n)
    for a, b in zip(small_dataset.trajectories, back.trajectories):
        assert np.allclose(a.states, b.states, atol=1e-12)


def test_n_zero_rejected():
    with pytest.raises(ValueError):
        generate_dataset(standard_spec(), 0, seed=0)


def test_env_step_worked_values():
    spec = SyntheticTaskSpec((PhaseSpec((0.5, 0.5), (0.6, 0.6), 0.04, 0.1, 0.0),))
    s = np.zeros(4)
    assert np.array_equal(env_step(s, np.zeros(2), spec), s)
    assert np.allclose(env_step(s, np.array([0.1, 0.0]), spec)[:2], [0.1, 0.0])
    # magnitude 10 clips to 1.5 * 0.1
    out = env_step(s, np.array([6.0, 8.0]), spec)
    assert np.isclose(np.linalg.norm(out[:2]), 0.15)
    assert np.allclose(out[:2], [0.09, 0.12])


@pytest.mark.parametrize("frac,expected", [(0.0, True), (0.99, True), (2.0, False)])
def test_rollout_success_radius(frac, expected):
    spec = standard_spec()
    eps = spec.phases[-1].arrival_eps
    s = np.zeros(8)
    s[6:8] = [-0.7, -0.8]
    s[:2] = s[6:8] + [frac * eps, 0.0]
    assert rollout_success(s, spec) is expected


def test_normalization_worked_means():
    spec = SyntheticTaskSpec((PhaseSpec((0.5, 0.5), (0.6, 0.6)),))
    a = Trajectory(states=np.array([[0.0, 0, 0, 0], [2.0, 4, 0, 0]]), actions=np.array([[1.0, 0], [0.0, 0]]))
    b = Trajectory(states=np.array([[4.0, 2, 0, 0], [6.0, 2, 0, 0]]), actions=np.array([[2.0, 3], [1.0, 1]]))
    ds = make_dataset([a, b], spec)
    # pooled over all four steps
    assert np.allclose(ds.state_mean, [3.0, 2.0, 0.0, 0.0])
    assert np.allclose(ds.action_mean, [1.0, 1.0])
    # constant columns hit the std floor and normalize to zero
    assert np.allclose(ds.state_std[2:], 1e-6)
    n = normalize_dataset(ds)
    assert all(np.all(t.states[:, 2:] == 0) for t in n.trajectories)

import itertools

import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from infocon.config import tiny_config
from infocon.evallab import (
    LabelError,
    LabelSet,
    PolicyConfig,
    activation_rates,
    baseline_last_state,
    baseline_linear_dp,
    baseline_uniform,
    evaluate_guided_policy,
    his,
    his_report,
    label_dataset,
    labels_from_ids,
    linear_dp_keys,
    next_key_targets,
    run_ends,
    train_guided_policy,
    uniform_keys,
)
from infocon.synthdata import make_dataset, standard_spec
from infocon.training import build_model


def his_oracle(pred, gt, T):
    total = 0
    for g in gt:
        nxt = T - 1
        for p in sorted(pred):
            if p >= g:
                nxt = p
                break
        total += nxt - g
    return total


def test_his_examples():
    assert his([2, 5, 9], [2, 5, 9], 10) == 0
    assert his([4, 7, 9], [3, 7], 10) == 1
    assert his([3], [8], 10) == 1
    with pytest.raises(ValueError):
        his([], [3], 10)


@given(st.data())
def test_his_matches_oracle(data):
    T = data.draw(st.integers(1, 40))
    pred = data.draw(st.lists(st.integers(0, T - 1), min_size=1, max_size=8, unique=True))
    gt = data.draw(st.lists(st.integers(0, T - 1), min_size=1, max_size=5, unique=True))
    assert his(sorted(pred), sorted(gt), T) == his_oracle(pred, gt, T)


def test_run_ends():
    assert run_ends([1, 1, 2, 2, 3]).tolist() == [1, 3, 4]
    assert run_ends([4, 4, 4]).tolist() == [2]


@given(st.lists(st.integers(0, 3), min_size=1, max_size=30))
def test_run_ends_invariants(ids):
    keys = run_ends(ids)
    assert keys[-1] == len(ids) - 1
    assert np.all(np.diff(keys) > 0)
    for k in keys[:-1]:
        assert ids[k] != ids[k + 1]


def test_activation_rates():
    ls = labels_from_ids([[0, 0, 1], [0, 2], [0], [0, 1]])
    rates = activation_rates(ls, 4)
    assert rates.tolist() == [1.0, 0.5, 0.25, 0.0]
    assert activation_rates(labels_from_ids([[0, 1], [1], [2, 1], [0]]), 3)[1] == 0.75
    with pytest.raises(ValueError):
        activation_rates(LabelSet([], [], ""), 3)


@given(st.lists(st.lists(st.integers(0, 3), min_size=1, max_size=10), min_size=1, max_size=6), st.permutations(range(4)))
def test_activation_rates_equivariant(seqs, perm):
    ids = [np.array(s) for s in seqs]
    perm = np.array(perm)
    base = activation_rates(labels_from_ids(ids), 4)
    relabeled = activation_rates(labels_from_ids([perm[i] for i in ids]), 4)
    assert np.allclose(relabeled[perm], base)
    shuffled = activation_rates(labels_from_ids(ids[::-1]), 4)
    assert np.array_equal(shuffled, base)


def test_uniform_keys():
    assert uniform_keys(10, 1).tolist() == [9]
    assert uniform_keys(10, 2).tolist() == [4, 9]
    assert uniform_keys(9, 3).tolist() == [2, 5, 8]
    with pytest.raises(ValueError):
        uniform_keys(3, 4)


def brute_force_dp(states, k):
    T = len(states)

    def piece(i, j):
        frac = (np.arange(i, j + 1) - i) / (j - i) if j > i else np.zeros(1)
        chord = states[i] + frac[:, None] * (states[j] - states[i])
        return ((states[i: j + 1] - chord) ** 2).sum()

    best = np.inf
    for bps in itertools.combinations(range(T - 1), k - 1):
        knots = (0, *bps, T - 1)
        cost = sum(piece(a, b) for a, b in zip(knots[:-1], knots[1:]))
        best = min(best, cost)
    return best


def test_linear_dp_corner():
    t = np.arange(9, dtype=float)
    states = np.stack([np.minimum(t, 5.0), np.maximum(t - 5.0, 0.0)], 1)
    keys, res = linear_dp_keys(states, 2)
    assert keys.tolist() == [5, 8]
    assert res < 1e-20


def test_linear_dp_errors_and_edges():
    with pytest.raises(ValueError):
        linear_dp_keys(np.zeros((3, 2)), 4)
    assert linear_dp_keys(np.zeros((1, 2)), 1)[0].tolist() == [0]
    assert linear_dp_keys(np.random.default_rng(0).normal(size=(3, 2)), 3)[0].tolist() == [0, 1, 2]


def test_linear_dp_matches_brute_force_sample():
    g = np.random.default_rng(1)
    for _ in range(20):
        T = int(g.integers(2, 12))
        k = int(g.integers(1, min(3, T) + 1))
        states = np.cumsum(g.normal(size=(T, 2)), 0)
        keys, res = linear_dp_keys(states, k)
        assert len(keys) == k and keys[-1] == T - 1 and np.all(np.diff(keys) > 0)
        assert res == pytest.approx(brute_force_dp(states, k), rel=1e-9, abs=1e-12)


def test_baselines_on_dataset(small_dataset):
    last = baseline_last_state(small_dataset)
    assert all(k.tolist() == [len(t) - 1] for k, t in zip(last.key_times, small_dataset.trajectories))
    for ls in (baseline_uniform(small_dataset, 3), baseline_linear_dp(small_dataset, 3)):
        for ids, keys, tr in zip(ls.concept_ids, ls.key_times, small_dataset.trajectories):
            assert len(ids) == len(tr)
            assert run_ends(ids).tolist() == keys.tolist()


def test_his_report_self_and_fields(small_dataset):
    gt = LabelSet([t.gt_phase for t in small_dataset.trajectories], [t.gt_key_times for t in small_dataset.trajectories])
    rep = his_report(gt, small_dataset)
    assert rep.total == 0 and rep.mean_per_key == 0.0
    last = his_report(baseline_last_state(small_dataset), small_dataset)
    assert all(v >= 0 for v in last.per_trajectory) and last.total > 0
    with pytest.raises(LabelError):
        his_report(LabelSet(gt.concept_ids[:2], gt.key_times[:2]), small_dataset)


def test_label_dataset(tmp_path, small_dataset):
    cfg = tiny_config()
    cfg.model.max_len = 160
    model = build_model(small_dataset, cfg)
    a = label_dataset(small_dataset, model, "abc")
    b = label_dataset(small_dataset, model, "abc")
    assert a.to_json() == b.to_json()
    for ids, keys, tr in zip(a.concept_ids, a.key_times, small_dataset.trajectories):
        assert len(ids) == len(tr) and keys.tolist() == run_ends(ids).tolist()
    a.save(tmp_path / "labels.json")
    assert LabelSet.load(tmp_path / "labels.json").to_json() == a.to_json()


def test_label_dataset_dimension_mismatch(small_dataset):
    cfg = tiny_config()
    cfg.model.max_len = 160
    model = build_model(small_dataset, cfg)
    trajs = [type(t)(t.states[:, :6], t.actions, t.gt_phase, t.gt_key_times) for t in small_dataset.trajectories]
    with pytest.raises(LabelError, match="state_dim"):
        label_dataset(make_dataset(trajs, small_dataset.spec), model)
    short = tiny_config()
    with pytest.raises(LabelError, match="max_len"):
        label_dataset(small_dataset, build_model(small_dataset, short))


def test_next_key_targets():
    assert next_key_targets(np.array([1, 4, 5]), 6).tolist() == [1, 1, 4, 4, 4, 5]


def test_guided_policy_smoke(small_dataset):
    gt = LabelSet([t.gt_phase for t in small_dataset.trajectories], [t.gt_key_times for t in small_dataset.trajectories])
    cfg = PolicyConfig(dim=8, iters=5, batch_size=4, warmup_iters=1)
    pol = train_guided_policy(small_dataset, gt, cfg)
    r1 = evaluate_guided_policy(pol, small_dataset.spec, 5, seed=0)
    r2 = evaluate_guided_policy(pol, small_dataset.spec, 5, seed=0)
    assert 0.0 <= r1 <= 1.0 and r1 == r2
    pol2 = train_guided_policy(small_dataset, gt, cfg)
    for k, v in pol.net.state_dict().items():
        assert torch.equal(v, pol2.net.state_dict()[k])

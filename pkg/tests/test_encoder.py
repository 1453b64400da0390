import math

import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from infocon.encoder import EncoderConfig, StateDecoder, StateEncoder, time_angle, time_embed


def encoder(max_len=40, seed=0):
    torch.manual_seed(seed)
    return StateEncoder(4, 2, EncoderConfig(hidden_dim=8, num_layers=2, num_heads=2, max_len=max_len))


def run(enc, states, prev):
    T = states.shape[1]
    pos = torch.arange(T)[None]
    return enc(states, prev, pos, torch.tensor([T]))


def test_time_angle_endpoints():
    A = 0.2
    assert math.isclose(time_angle(9, 10, A), math.pi / 2.4)
    assert math.isclose(time_angle(-1, 10, A), -math.pi / 2.4)


def test_time_embed_worked_value():
    z = torch.tensor([1.0, 0.0], dtype=torch.float64)
    out = time_embed(z, torch.tensor(4), torch.tensor(10), 0.2)
    theta = (2 * 5 / 10 - 1) * math.pi / 2.4
    assert torch.allclose(out, torch.tensor([math.sin(theta), math.cos(theta), 0.0], dtype=torch.float64))


@given(
    st.lists(st.floats(-1, 1), min_size=3, max_size=3).filter(lambda v: np.linalg.norm(v) > 1e-3),
    st.integers(0, 99),
    st.integers(1, 100),
    st.sampled_from([0.05, 0.2, 1.0]),
)
def test_time_embed_unit_norm(v, t, T, A):
    z = torch.tensor(v, dtype=torch.float64)
    z = z / z.norm()
    out = time_embed(z, torch.tensor(min(t, T - 1)), torch.tensor(T), A)
    assert abs(float(out.norm()) - 1.0) < 1e-12


def test_time_embed_rejects_bad_length():
    with pytest.raises(ValueError):
        time_embed(torch.ones(2) / 2**0.5, torch.tensor(0), torch.tensor(0), 0.2)


def test_causality():
    enc = encoder().double()
    g = torch.Generator().manual_seed(0)
    s = torch.randn(1, 12, 4, generator=g, dtype=torch.float64)
    a = torch.randn(1, 12, 2, generator=g, dtype=torch.float64)
    raw0, z0 = run(enc, s, a)
    s2, a2 = s.clone(), a.clone()
    s2[0, 7] += 1.0
    a2[0, 7] += 1.0  # a_6 is visible from step 7 on
    raw1, _ = run(enc, s2, a2)
    assert torch.equal(raw0[0, :7], raw1[0, :7])
    assert not torch.allclose(raw0[0, 7], raw1[0, 7])


def test_unit_rows_and_determinism():
    enc = encoder()
    g = torch.Generator().manual_seed(1)
    for _ in range(20):
        T = int(torch.randint(2, 30, (1,), generator=g))
        s = torch.randn(1, T, 4, generator=g)
        a = torch.randn(1, T, 2, generator=g)
        raw, z = run(enc, s, a)
        assert torch.allclose(raw.norm(dim=-1), torch.ones(T), atol=1e-6)
        assert torch.allclose(z.norm(dim=-1), torch.ones(T), atol=1e-6)
        assert z.shape[-1] == 9
        raw2, _ = run(enc, s, a)
        assert torch.equal(raw, raw2)


def test_capacity_error_mentions_window():
    enc = encoder(max_len=8)
    with pytest.raises(ValueError, match="max_len|window"):
        run(enc, torch.zeros(1, 9, 4), torch.zeros(1, 9, 2))


def test_decoder_checks_concept_dim():
    dec = StateDecoder(9, 4, EncoderConfig(hidden_dim=8, num_layers=1, num_heads=2, max_len=16))
    assert dec(torch.zeros(2, 5, 9)).shape == (2, 5, 4)
    with pytest.raises(ValueError):
        dec(torch.zeros(2, 5, 8))


@pytest.mark.parametrize(
    "t,T,sin_part,cos_part",
    [(9, 10, 0.965926, 0.258819), (1, 8, -0.608761, 0.793353), (4, 10, 0.0, 1.0)],
)
def test_time_embed_spec_values(t, T, sin_part, cos_part):
    # t is 0-based; the angle uses t + 1
    z = torch.tensor([0.6, 0.8], dtype=torch.float64)
    out = time_embed(z, torch.tensor(t), torch.tensor(T), 0.2)
    expected = torch.tensor([sin_part, cos_part * 0.6, cos_part * 0.8], dtype=torch.float64)
    assert torch.allclose(out, expected, atol=1e-6)

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit

from csasr.config import CsaConfig
from csasr.csa import attention_gates, channel_attention, csa_block, csa_fe_stage, init_csa_block, init_csa_stage, spatial_attention
from csasr.params import prefixed, to_tensors
from csasr.tensor import ShapeError, Tape, Tensor, backward, tsum


def ref_channel_gate(f, p):
    # one image at a time, explicit sums
    n, c = f.shape[:2]
    out = np.zeros((n, c, 1, 1))
    for b in range(n):
        z = np.array([f[b, i].max() + f[b, i].mean() for i in range(c)])
        h = np.maximum(0.0, z @ p["fc1.weight"] + p["fc1.bias"])
        out[b, :, 0, 0] = 1 / (1 + np.exp(-(h @ p["fc2.weight"] + p["fc2.bias"])))
    return out


def ref_spatial_gate(f, p):
    n, c, h, w = f.shape
    w7 = p["spatial.weight"][0, 0]
    k = w7.shape[0]
    r = k // 2
    m = f.max(axis=1) + f.mean(axis=1)
    mp = np.pad(m, ((0, 0), (r, r), (r, r)))
    out = np.zeros((n, 1, h, w))
    for b in range(n):
        for i in range(h):
            for j in range(w):
                out[b, 0, i, j] = 1 / (1 + np.exp(-((mp[b, i:i + k, j:j + k] * w7).sum() + p["spatial.bias"][0])))
    return out


def random_block(seed, channels, reduction=4):
    r = np.random.default_rng(seed)
    arrays = init_csa_block(r, CsaConfig(channels=channels, reduction=reduction), np.float64)
    return {k: v + 0.3 * r.standard_normal(v.shape) for k, v in arrays.items()}


@pytest.mark.parametrize("seed", range(10))
def test_channel_attention_oracle(f64, seed):
    r = np.random.default_rng(100 + seed)
    c = int(r.integers(2, 9))
    p = random_block(seed, c)
    f = r.standard_normal((2, c, 5, 6))
    got = channel_attention(Tensor(f), to_tensors(p)).data
    np.testing.assert_allclose(got, ref_channel_gate(f, p), atol=1e-6)


@pytest.mark.parametrize("seed", range(10))
def test_spatial_attention_oracle(f64, seed):
    r = np.random.default_rng(200 + seed)
    c = int(r.integers(1, 6))
    p = random_block(seed, max(c, 1))
    f = r.standard_normal((2, c, 6, 7))
    got = spatial_attention(Tensor(f), to_tensors(p)).data
    np.testing.assert_allclose(got, ref_spatial_gate(f, p), atol=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_block_applies_channel_then_spatial(f64, seed):
    r = np.random.default_rng(300 + seed)
    p = random_block(seed, 6)
    f = r.standard_normal((1, 6, 5, 5))
    f1 = f * ref_channel_gate(f, p)
    want = f1 * ref_spatial_gate(f1, p)
    np.testing.assert_allclose(csa_block(Tensor(f), to_tensors(p)).data, want, atol=1e-6)


def test_zero_weights_give_half_gates(f64):
    p = {k: np.zeros_like(v) for k, v in random_block(0, 4).items()}
    f = np.random.default_rng(0).standard_normal((1, 4, 7, 7))
    gates, out = attention_gates(Tensor(f), to_tensors(p))
    assert np.all(gates.m_c.data == 0.5) and np.all(gates.m_s.data == 0.5)
    np.testing.assert_allclose(out.data, 0.25 * f)


def test_shapes_and_hidden_width():
    assert CsaConfig(channels=64, reduction=16).hidden == 4
    assert CsaConfig(channels=8, reduction=16).hidden == 1
    p = to_tensors(init_csa_block(np.random.default_rng(0), CsaConfig(channels=8), np.float32))
    f = Tensor(np.zeros((2, 8, 9, 9), dtype=np.float32))
    assert channel_attention(f, p).shape == (2, 8, 1, 1)
    assert spatial_attention(f, p).shape == (2, 1, 9, 9)
    with pytest.raises(ShapeError):
        channel_attention(Tensor(np.zeros((1, 5, 4, 4), dtype=np.float32)), p)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 2.0))
def test_gates_strictly_inside_unit_interval(seed, spread):
    r = np.random.default_rng(seed)
    p = to_tensors(random_block(seed, 4))
    f = Tensor(spread * r.standard_normal((1, 4, 5, 5)))
    gates, _ = attention_gates(f, p)
    for g in (gates.m_c.data, gates.m_s.data):
        assert np.all(g > 0) and np.all(g < 1)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(2.0, 1e4))
def test_gates_closed_interval_under_saturation(seed, spread):
    # very large logits round the sigmoid to exactly 0 or 1; never outside
    r = np.random.default_rng(seed)
    gates, out = attention_gates(Tensor(spread * r.standard_normal((1, 4, 5, 5))), to_tensors(random_block(seed, 4)))
    for g in (gates.m_c.data, gates.m_s.data):
        assert np.all(g >= 0) and np.all(g <= 1)
    assert np.all(np.isfinite(out.data))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_output_bounded_by_input(seed):
    r = np.random.default_rng(seed)
    f = r.standard_normal((1, 4, 5, 5))
    out = csa_block(Tensor(f), to_tensors(random_block(seed, 4))).data
    assert np.all(np.abs(out) <= np.abs(f) + 1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_channel_gate_permutation_equivariant(seed):
    # permuting channels together with the dense weights permutes the gate
    r = np.random.default_rng(seed)
    p = random_block(seed, 5)
    perm = r.permutation(5)
    q = dict(p)
    q["fc1.weight"] = p["fc1.weight"][perm]
    q["fc2.weight"] = p["fc2.weight"][:, perm]
    q["fc2.bias"] = p["fc2.bias"][perm]
    f = r.standard_normal((1, 5, 4, 4))
    a = channel_attention(Tensor(f), to_tensors(p)).data
    b = channel_attention(Tensor(f[:, perm]), to_tensors(q)).data
    np.testing.assert_allclose(b, a[:, perm], atol=1e-6)
    sa = spatial_attention(Tensor(f), to_tensors(p)).data
    np.testing.assert_allclose(spatial_attention(Tensor(f[:, perm]), to_tensors(p)).data, sa, atol=1e-6)


def test_stage_residual_and_gradients(f64):
    r = np.random.default_rng(0)
    arrays = init_csa_stage(r, CsaConfig(channels=4), np.float64)
    zeroed = {k: (np.zeros_like(v) if k.startswith("conv") else v) for k, v in arrays.items()}
    f = r.standard_normal((1, 4, 6, 6))
    # conv outputs zero, so the stage reduces to its skip
    np.testing.assert_allclose(csa_fe_stage(Tensor(f), to_tensors(zeroed)).data, f)
    assert np.all(csa_fe_stage(Tensor(f), to_tensors(zeroed), residual=False).data == 0)

    params = to_tensors(arrays)
    x = Tensor(f, requires_grad=True)
    with Tape() as tape:
        loss = tsum(csa_fe_stage(x, params))
    backward(loss, tape)
    assert x.grad is not None
    for name, t in params.items():
        assert t.grad is not None and t.grad.shape == t.shape, name

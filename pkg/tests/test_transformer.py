import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from jitcast import autograd as ag
from jitcast.autograd import Tensor
from jitcast.transformer import (ConfigError, ModelConfig, Seq2SeqTransformer, attention, causal_mask,
                                 multi_head_attention, positional_encoding)


def test_positional_encoding_values():
    pe = positional_encoding(6, 8)
    np.testing.assert_array_equal(pe[0], [0, 1, 0, 1, 0, 1, 0, 1])
    for pos in range(6):
        for i in range(8):
            angle = pos / 10000 ** (i / 8)
            want = math.sin(angle) if i % 2 == 0 else math.cos(angle)
            assert pe[pos, i] == pytest.approx(want, abs=1e-15)


def test_causal_mask_layout():
    m = causal_mask(4)
    assert m.dtype == bool
    np.testing.assert_array_equal(m, np.triu(np.ones((4, 4)), 1).astype(bool))
    assert not m.diagonal().any()


def naive_attention(q, k, v, mask=None):
    out = np.zeros((q.shape[0], v.shape[1]))
    weights = np.zeros((q.shape[0], k.shape[0]))
    for i in range(q.shape[0]):
        scores = [float(q[i] @ k[j]) / math.sqrt(q.shape[1]) for j in range(k.shape[0])]
        allowed = [j for j in range(k.shape[0]) if mask is None or not mask[i, j]]
        top = max(scores[j] for j in allowed)
        z = sum(math.exp(scores[j] - top) for j in allowed)
        for j in allowed:
            weights[i, j] = math.exp(scores[j] - top) / z
        out[i] = weights[i] @ v
    return out, weights


@given(st.integers(1, 5), st.integers(1, 6), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_attention_matches_loop_oracle(lq, lk, d, seed):
    rng = np.random.default_rng(seed)
    q, k, v = rng.normal(size=(lq, d)), rng.normal(size=(lk, d)), rng.normal(size=(lk, 3))
    out, w = attention(q, k, v, return_weights=True)
    ref_out, ref_w = naive_attention(q, k, v)
    np.testing.assert_allclose(out.data, ref_out, atol=1e-12)
    np.testing.assert_allclose(w.data, ref_w, atol=1e-12)


def test_masked_attention_matches_oracle():
    rng = np.random.default_rng(0)
    q, k, v = rng.normal(size=(5, 4)), rng.normal(size=(5, 4)), rng.normal(size=(5, 2))
    mask = causal_mask(5)
    out, w = attention(q, k, v, mask, return_weights=True)
    ref_out, ref_w = naive_attention(q, k, v, mask)
    np.testing.assert_allclose(out.data, ref_out, atol=1e-12)
    assert np.all(w.data[mask] == 0.0)
    np.testing.assert_allclose(w.data.sum(axis=-1), 1.0, atol=1e-12)


def test_attention_dim_mismatch():
    with pytest.raises(ag.ShapeError):
        attention(np.ones((2, 3)), np.ones((2, 4)), np.ones((2, 4)))


def test_multi_head_matches_per_head_loop():
    rng = np.random.default_rng(1)
    b, lq, lk, d, h = 2, 3, 4, 6, 2
    xq, xkv = rng.normal(size=(b, lq, d)), rng.normal(size=(b, lk, d))
    w = [rng.normal(size=(d, d)) for _ in range(4)]
    got = multi_head_attention(xq, xkv, *[Tensor(a) for a in w], n_heads=h).data
    dk = d // h
    for n in range(b):
        q, k, v = xq[n] @ w[0], xkv[n] @ w[1], xkv[n] @ w[2]
        heads = [naive_attention(q[:, i * dk:(i + 1) * dk], k[:, i * dk:(i + 1) * dk],
                                 v[:, i * dk:(i + 1) * dk])[0] for i in range(h)]
        np.testing.assert_allclose(got[n], np.concatenate(heads, axis=1) @ w[3], atol=1e-12)


def test_head_divisibility_is_checked():
    with pytest.raises(ConfigError):
        ModelConfig(d_model=10, n_heads=4)
    with pytest.raises(ConfigError):
        multi_head_attention(np.ones((1, 2, 6)), np.ones((1, 2, 6)), *[Tensor(np.eye(6))] * 4, n_heads=4)


def test_zero_head_model_starts_as_persistence():
    model = Seq2SeqTransformer(ModelConfig(), seed=3)
    rng = np.random.default_rng(0)
    dec = rng.normal(size=(2, 7, 3))
    np.testing.assert_array_equal(model.predict(rng.normal(size=(2, 30, 3)), dec), dec[..., 0])


def test_decoder_is_causal(tiny_config):
    model = Seq2SeqTransformer(tiny_config, seed=0)
    rng = np.random.default_rng(0)
    enc, dec = rng.normal(size=(1, 10, 3)), rng.normal(size=(1, 7, 3))
    base = model.predict(enc, dec)
    changed = dec.copy()
    changed[0, 4:] += 5.0
    after = model.predict(enc, changed)
    np.testing.assert_array_equal(after[0, :4], base[0, :4])
    assert not np.allclose(after[0, 4:], base[0, 4:])


def test_forward_shapes_and_batch_independence(tiny_config):
    model = Seq2SeqTransformer(tiny_config, seed=0)
    rng = np.random.default_rng(1)
    enc, dec = rng.normal(size=(3, 30, 3)), rng.normal(size=(3, 9, 3))
    out = model.predict(enc, dec)
    assert out.shape == (3, 9)
    np.testing.assert_allclose(model.predict(enc[1], dec[1])[0], out[1], atol=1e-13)


def test_init_is_seeded_and_scaled():
    cfg = ModelConfig(zero_init_head=False)
    a, b = Seq2SeqTransformer(cfg, seed=5), Seq2SeqTransformer(cfg, seed=5)
    c = Seq2SeqTransformer(cfg, seed=6)
    for name, arr in a.weights.arrays().items():
        np.testing.assert_array_equal(arr, b.weights.arrays()[name])
    assert any(not np.array_equal(arr, c.weights.arrays()[n]) for n, arr in a.weights.arrays().items())
    w = a.weights["enc0.ffn.w1"].data
    assert np.abs(w).max() <= 1 / math.sqrt(cfg.d_model)
    np.testing.assert_array_equal(a.weights["enc0.norm1.gain"].data, 1.0)
    np.testing.assert_array_equal(a.weights["enc0.norm1.bias"].data, 0.0)


def test_load_arrays_rejects_mismatch(tiny_config):
    model = Seq2SeqTransformer(tiny_config)
    arrays = model.weights.arrays()
    arrays["head.w"] = np.ones((3, 3))
    with pytest.raises(Exception):
        model.weights.load_arrays(arrays)


def test_attention_special_cases():
    rng = np.random.default_rng(3)
    v = rng.normal(size=(1, 4))
    np.testing.assert_array_equal(attention(rng.normal(size=(3, 2)), rng.normal(size=(1, 2)), v).data, np.repeat(v, 3, 0))
    x = rng.normal(size=(1, 5, 4))
    w_q, w_k, w_v = (rng.normal(size=(4, 4)) for _ in range(3))
    single = multi_head_attention(x, x, Tensor(w_q), Tensor(w_k), Tensor(w_v), Tensor(np.eye(4)), n_heads=1).data
    np.testing.assert_allclose(single[0], attention(x[0] @ w_q, x[0] @ w_k, x[0] @ w_v).data, atol=1e-13)
    assert positional_encoding(2, 6)[1, 0] == pytest.approx(0.841470985, abs=1e-9)

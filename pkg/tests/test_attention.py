import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradcheck import numeric_grad, rel_err
from spikepose.attention import (
    AttentionConfig,
    JLVerifyConfig,
    SpikingSelfAttention,
    SpikingTransformer,
    TransformerLayer,
    alt_scores,
    binary_embed,
    g_map,
    hamming_scores,
    hamming_scores_backward,
    hamming_scores_popcount,
    pe_table,
    positional_encoding,
    temporal_attention_map,
    verify_jl,
)
from spikepose.errors import ConfigurationError
from spikepose.numerics import ContractError, Parameter, Tape, Tensor


def bits(rng, *shape):
    return rng.integers(0, 2, shape).astype(np.float64)


def mismatch_oracle(q, k):
    """Direct count of differing bits, one pair at a time."""
    out = np.empty((len(q), len(k)))
    for i, a in enumerate(q):
        for j, b in enumerate(k):
            out[i, j] = 1.0 - sum(int(x) != int(y) for x, y in zip(a, b)) / len(a)
    return out


def relaxed(q, k):
    c = q.shape[-1]
    return 1.0 - (q[:, None, :] * (1 - k[None]) + (1 - q[:, None, :]) * k[None]).sum(-1) / c


class TestPositionalEncoding:
    def test_values(self):
        assert positional_encoding(0, 0, 8, 16) == 0.0
        assert positional_encoding(0, 1, 8, 16) == pytest.approx(1 / 8)
        assert positional_encoding(1, 0, 8, 16) == pytest.approx(math.sin(1) / 8)
        assert positional_encoding(3, 5, 4, 16) == pytest.approx(math.cos(3 / 10000 ** (4 / 16)) / 4)

    def test_channel_range(self):
        with pytest.raises(ValueError):
            positional_encoding(0, 16, 8, 16)

    def test_table(self):
        t = pe_table(5, 6, 5)
        assert t.shape == (5, 6) and t[2, 3] == pytest.approx(positional_encoding(2, 3, 5, 6))


class TestHamming:
    def test_examples(self):
        q = np.array([[1.0, 0, 1, 0]])
        assert hamming_scores(q, q).data[0, 0] == 1.0
        assert hamming_scores(q, 1 - q).data[0, 0] == 0.0
        assert hamming_scores(q, np.array([[1.0, 1, 0, 0]])).data[0, 0] == 0.5

    @pytest.mark.parametrize("c", [4, 64, 1024])
    def test_matches_mismatch_count(self, c):
        rng = np.random.default_rng(c)
        q, k = bits(rng, 6, c), bits(rng, 5, c)
        assert np.array_equal(hamming_scores(q, k).data, mismatch_oracle(q, k))

    @pytest.mark.parametrize("c", [4, 64, 1024])
    def test_popcount(self, c):
        rng = np.random.default_rng(c + 1)
        q, k = bits(rng, 30, c), bits(rng, 20, c)
        assert np.array_equal(hamming_scores_popcount(q, k), hamming_scores(q, k).data)

    def test_non_binary(self):
        with pytest.raises(ContractError):
            hamming_scores(np.array([[0.5, 1.0]]), np.array([[1.0, 1.0]]))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 40))
    def test_symmetric_and_bounded(self, seed, c):
        rng = np.random.default_rng(seed)
        q, k = bits(rng, 4, c), bits(rng, 3, c)
        a = hamming_scores(q, k).data
        assert np.array_equal(a, hamming_scores(k, q).data.T)
        assert a.min() >= 0 and a.max() <= 1

    def test_backward_examples(self):
        gq, _ = hamming_scores_backward(np.zeros((1, 2)), np.array([[1.0, 0.0]]), np.ones((1, 1)))
        assert np.allclose(gq, [[0.5, -0.5]])
        gq, _ = hamming_scores_backward(np.zeros((1, 3)), np.ones((1, 3)), np.ones((1, 1)))
        assert np.allclose(gq, 1 / 3)

    def test_backward_matches_relaxed_fd(self):
        rng = np.random.default_rng(3)
        q0, k0 = bits(rng, 4, 6), bits(rng, 5, 6)
        w = rng.normal(size=(4, 5))
        q, k = Parameter(q0, dtype=np.float64), Parameter(k0, dtype=np.float64)
        with Tape() as tape:
            loss = (hamming_scores(q, k) * w).sum()
        tape.backward(loss)
        assert rel_err(q.grad, numeric_grad(lambda v: float((relaxed(v, k0) * w).sum()), q0)) < 1e-6
        assert rel_err(k.grad, numeric_grad(lambda v: float((relaxed(q0, v) * w).sum()), k0)) < 1e-6

    def test_batched(self):
        rng = np.random.default_rng(4)
        q, k = bits(rng, 2, 3, 5, 8), bits(rng, 2, 3, 7, 8)
        out = hamming_scores(q, k).data
        assert out.shape == (2, 3, 5, 7)
        assert np.array_equal(out[1, 2], mismatch_oracle(q[1, 2], k[1, 2]))


class TestAltScores:
    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 30))
    def test_binary_identity(self, seed, c):
        rng = np.random.default_rng(seed)
        q, k = bits(rng, 5, c), bits(rng, 4, c)
        h = hamming_scores(q, k).data
        assert np.array_equal(alt_scores(q, k, "euclidean").data, h)
        assert np.array_equal(alt_scores(q, k, "manhattan").data, h)

    def test_dot_example(self):
        s = alt_scores(np.array([[1.0, 0, 1, 0]]), np.array([[1.0, 1, 0, 0]]), "dot").data
        assert s[0, 0] == 0.5

    def test_dot_blind_spot(self):
        key = np.array([[0.0, 1.0]])
        a = alt_scores(np.array([[0.0, 1.0]]), key, "dot").data
        b = alt_scores(np.array([[1.0, 1.0]]), key, "dot").data
        assert a[0, 0] == b[0, 0]
        assert hamming_scores(np.array([[0.0, 1.0]]), key).data[0, 0] != hamming_scores(np.array([[1.0, 1.0]]), key).data[0, 0]

    def test_unknown(self):
        with pytest.raises(ValueError):
            alt_scores(np.ones((1, 2)), np.ones((1, 2)), "cosine")

    @pytest.mark.parametrize("kind", ["dot", "euclidean", "manhattan"])
    def test_gradients(self, kind):
        rng = np.random.default_rng(5)
        # off-bit values keep the manhattan kink away from the probe points
        q0 = rng.uniform(0.05, 0.45, (3, 4)) + bits(rng, 3, 4) * 0.5
        k0 = rng.uniform(0.05, 0.45, (2, 4)) + bits(rng, 2, 4) * 0.5
        w = rng.normal(size=(3, 2))
        q, k = Parameter(q0, dtype=np.float64), Parameter(k0, dtype=np.float64)
        with Tape() as tape:
            loss = (alt_scores(q, k, kind) * w).sum()
        tape.backward(loss)
        f = lambda a, b: float((alt_scores(a, b, kind).data * w).sum())  # noqa: E731
        assert rel_err(q.grad, numeric_grad(lambda v: f(v, k0), q0, h=1e-5)) < 1e-4
        assert rel_err(k.grad, numeric_grad(lambda v: f(q0, v), k0, h=1e-5)) < 1e-4


def spikes(shape, rate=0.3, seed=0):
    return (np.random.default_rng(seed).random(shape) < rate).astype(np.float32)


def small_cfg(**kw):
    base = dict(channels=8, c_k=4, c_v=4, layers=1)
    base.update(kw)
    return AttentionConfig(**base)


class TestAttentionLayer:
    def test_shape_preserved(self):
        layer = SpikingSelfAttention(small_cfg())
        x = spikes((3, 2, 2, 3, 8))
        out = layer(x)
        assert out.shape == x.shape
        assert set(np.unique(out.data)) <= {0.0, 1.0, 2.0}

    def test_single_token(self):
        layer = SpikingSelfAttention(small_cfg(include_pe=False))
        layer.keep_attention = True
        out = layer(spikes((1, 1, 1, 1, 8), 0.5))
        assert np.array_equal(layer.last_attention, np.ones((1, 1, 1, 1)))
        assert out.shape == (1, 1, 1, 1, 8)

    @pytest.mark.parametrize("kind", ["AND", "IAND"])
    def test_binary_with_and(self, kind):
        layer = SpikingSelfAttention(small_cfg(sew_kind=kind))
        assert set(np.unique(layer(spikes((3, 2, 2, 2, 8))).data)) <= {0.0, 1.0}

    def test_rows_sum_to_one(self):
        layer = SpikingSelfAttention(small_cfg(heads=2))
        layer.keep_attention = True
        layer(spikes((4, 2, 2, 2, 8)))
        a = layer.last_attention
        assert a.shape == (2, 2, 16, 16)
        assert np.abs(a.sum(-1) - 1).max() < 1e-6

    def test_spatial_permutation_equivariance(self):
        rng = np.random.default_rng(6)
        layer = SpikingSelfAttention(small_cfg(include_pe=False), rng=np.random.default_rng(7))
        x = spikes((3, 2, 3, 3, 8), 0.4)
        perm = rng.permutation(9)
        xp = x.reshape(3, 2, 9, 8)[:, :, perm].reshape(x.shape)
        out = layer(x).data.reshape(3, 2, 9, 8)
        outp = layer(xp).data.reshape(3, 2, 9, 8)
        assert np.array_equal(outp, out[:, :, perm])

    def test_pe_changes_queries(self):
        x = spikes((4, 1, 2, 2, 8), 0.5)
        a = SpikingSelfAttention(small_cfg(include_pe=True), rng=np.random.default_rng(1))
        b = SpikingSelfAttention(small_cfg(include_pe=False), rng=np.random.default_rng(1))
        a.keep_attention = b.keep_attention = True
        a(x)
        b(x)
        assert not np.array_equal(a.last_attention, b.last_attention)

    def test_spatiotemporal_pe(self):
        layer = SpikingSelfAttention(small_cfg(pe_mode="spatiotemporal"))
        assert layer(spikes((2, 1, 2, 2, 8))).shape == (2, 1, 2, 2, 8)

    def test_gradients_flow(self):
        layer = SpikingSelfAttention(small_cfg(), rng=np.random.default_rng(2))
        with Tape() as tape:
            loss = layer(spikes((3, 2, 2, 2, 8), 0.5)).sum()
        tape.backward(loss)
        assert np.any(layer.v.weight.grad != 0)
        assert np.any(layer.q.op.weight.grad != 0)

    def test_bad_heads(self):
        with pytest.raises(ConfigurationError):
            small_cfg(heads=3)


class TestTransformer:
    def test_zero_layers_identity(self):
        x = spikes((2, 1, 2, 2, 8))
        t = SpikingTransformer(small_cfg(layers=0))
        assert t(x) is x
        assert t.num_parameters() == 0

    def test_parameter_count_linear_in_layers(self):
        one = SpikingTransformer(small_cfg(layers=1)).num_parameters()
        two = SpikingTransformer(small_cfg(layers=2)).num_parameters()
        assert two == 2 * one and one == TransformerLayer(small_cfg()).num_parameters()

    def test_heads_shape(self):
        x = spikes((2, 1, 2, 2, 8))
        a = SpikingTransformer(small_cfg(heads=1))(x)
        b = SpikingTransformer(small_cfg(heads=2))(x)
        assert a.shape == b.shape == x.shape

    def test_stack_runs(self):
        x = spikes((2, 2, 2, 2, 8))
        out = SpikingTransformer(small_cfg(layers=2))(x)
        assert out.shape == x.shape and out.data.min() >= 0

    def test_temporal_map(self):
        layer = SpikingSelfAttention(small_cfg())
        layer.keep_attention = True
        layer(spikes((4, 2, 2, 3, 8)))
        m = temporal_attention_map(layer.last_attention, 4)
        assert m.shape == (4, 4)
        assert np.allclose(m.sum(axis=1), 6)


class TestBinaryEmbedding:
    def test_properties(self):
        rng = np.random.default_rng(8)
        A = rng.standard_normal((64, 10))
        v = rng.standard_normal(10)
        b = binary_embed(v, A)
        assert np.array_equal(binary_embed(3.5 * v, A), b)
        assert np.array_equal(binary_embed(-v, A), 1 - b)
        assert hamming_scores(b[None].astype(float), b[None].astype(float)).data[0, 0] == 1.0

    def test_zero_vector(self):
        with pytest.raises(ValueError):
            binary_embed(np.zeros(3), np.ones((4, 3)))


class TestJL:
    def test_g(self):
        assert g_map(1.0) == pytest.approx(1.0)
        assert g_map(0.5) == pytest.approx(0.0, abs=1e-12)
        assert g_map(0.0) == pytest.approx(-1.0)

    def test_premise_enforced(self):
        with pytest.raises(ConfigurationError):
            JLVerifyConfig(c_k=64, delta=0.1, trials=1000)

    def test_identical_pair(self):
        rng = np.random.default_rng(9)
        A = rng.standard_normal((256, 8))
        v = rng.standard_normal(8)
        d_h = 1.0 - np.count_nonzero(binary_embed(v, A) != binary_embed(v, A)) / 256
        assert d_h == 1.0 and g_map(d_h + 0.1) == 1.0

    def test_hamming_tracks_angle(self):
        report = verify_jl(JLVerifyConfig(d_k=16, c_k=2048, delta=0.2, trials=200), seed=1)
        assert report.violation_rate == 0.0
        assert report.negative_cosines > 0
        assert report.max_deviation < 0.2

    def test_tight_delta_violates(self):
        report = verify_jl(JLVerifyConfig(d_k=16, c_k=2048, delta=0.004, trials=300, m=1), seed=2)
        assert report.violation_rate > 0 and report.max_gap > 0

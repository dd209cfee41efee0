import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradcheck import numeric_grad, rel_err
from spikepose.neuron import (
    LIFConfig,
    LIFState,
    SpikeMeter,
    SpikingLayer,
    Surrogate,
    heaviside,
    lif_sequence,
    lif_step,
    plif_leak,
    spike_rate,
    spiking_linear,
)
from spikepose.numerics import ContractError, NumericError, Parameter, PreconditionError, Tape, Tensor


class TestHeaviside:
    def test_zero_spikes(self):
        assert heaviside(Tensor([0.0])).data[0] == 1.0

    def test_negative(self):
        assert heaviside(Tensor([-0.1])).data[0] == 0.0

    def test_atan_surrogate_peak(self):
        x = Parameter([0.0], dtype=np.float64)
        with Tape() as tape:
            y = heaviside(x, Surrogate("atan", alpha=2.0)).sum()
        tape.backward(y)
        assert x.grad[0] == pytest.approx(1.0)

    def test_rectangular_window(self):
        sur = Surrogate("rectangular", width=0.5)
        np.testing.assert_allclose(sur.grad(np.array([0.0, 0.2, 0.3])), [2.0, 2.0, 0.0])


class TestLIFStep:
    def test_hand_rolled_trace(self):
        cfg = LIFConfig(lam=0.5, v_th=1.0)
        state = LIFState(np.zeros(1))
        spikes = []
        for _ in range(3):
            s, state = lif_step(state, np.array([0.6]), cfg)
            spikes.append(s[0])
        assert spikes == [0.0, 0.0, 1.0]
        assert abs(state.u[0] - 0.05) < 1e-9

    def test_leak_only(self):
        cfg = LIFConfig(lam=0.8)
        state = LIFState(np.array([0.7]))
        for t in range(1, 30):
            s, state = lif_step(state, np.zeros(1), cfg)
            assert s[0] == 0
            assert abs(state.u[0] - 0.8**t * 0.7) < 1e-12

    def test_threshold_input_spikes_immediately(self):
        s, _ = lif_step(LIFState(np.zeros(1)), np.array([1.0]), LIFConfig(lam=0.3))
        assert s[0] == 1.0

    def test_hard_reset(self):
        cfg = LIFConfig(lam=0.5, reset="hard", u_rest=-0.5)
        s, state = lif_step(LIFState(np.zeros(1)), np.array([2.0]), cfg)
        assert s[0] == 1 and state.u[0] == -0.5

    def test_nonzero_rest_leaks_toward_rest(self):
        cfg = LIFConfig(lam=0.5, u_rest=-1.0, v_th=1.0)
        _, state = lif_step(LIFState(np.zeros(1)), np.zeros(1), cfg)
        assert state.u[0] == pytest.approx(-0.5)

    def test_shape_mismatch(self):
        with pytest.raises(PreconditionError):
            lif_step(LIFState(np.zeros(2)), np.zeros(3), LIFConfig())

    def test_nan(self):
        with pytest.raises(NumericError):
            lif_step(LIFState(np.zeros(1)), np.array([np.nan]), LIFConfig())

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            LIFConfig(lam=1.0)
        with pytest.raises(ValueError):
            LIFConfig(v_th=0.0, u_rest=0.0)


class TestLIFSequence:
    @settings(max_examples=30, deadline=None)
    @given(
        st.floats(0.0, 0.95),
        st.sampled_from(["soft", "hard"]),
        st.integers(0, 2**31 - 1),
    )
    def test_matches_stepwise(self, lam, reset, seed):
        cfg = LIFConfig(lam=lam, reset=reset)
        x = np.random.default_rng(seed).uniform(-1, 2, (6, 5))
        out = lif_sequence(Tensor(x), cfg).data
        state = LIFState.rest(5, cfg)
        for t in range(6):
            s, state = lif_step(state, x[t], cfg)
            np.testing.assert_array_equal(out[t], s)

    def test_soft_reset_exact(self):
        cfg = LIFConfig(lam=0.5)
        x = np.array([[1.7], [0.0]])
        s = lif_sequence(Tensor(x), cfg).data
        # after the spike u = h - v_th = 0.7; the next step leaks to 0.35
        assert s[:, 0].tolist() == [1.0, 0.0]
        _, st1 = lif_step(LIFState(np.zeros(1)), x[0], cfg)
        assert st1.u[0] == pytest.approx(0.7)

    def test_forward_invariant_to_surrogate(self):
        x = np.random.default_rng(1).uniform(-1, 2, (8, 20))
        a = lif_sequence(Tensor(x), LIFConfig(surrogate=Surrogate("atan"))).data
        b = lif_sequence(Tensor(x), LIFConfig(surrogate=Surrogate("rectangular"))).data
        np.testing.assert_array_equal(a, b)

    def test_steady_state_bound(self):
        lam = 0.6
        cfg = LIFConfig(lam=lam)
        rng = np.random.default_rng(2)
        x = rng.uniform(0, cfg.v_th * (1 - lam), (200, 50))
        u = LIFState.rest(50, cfg)
        for t in range(200):
            _, u = lif_step(u, x[t], cfg)
            assert np.all(u.u <= cfg.v_th)

    @pytest.mark.parametrize("reset", ["soft", "hard"])
    @pytest.mark.parametrize("kind", ["atan", "rectangular"])
    def test_relaxed_gradient_matches_finite_differences(self, reset, kind):
        sur = Surrogate(kind, alpha=2.0, width=4.0)
        cfg = LIFConfig(lam=0.6, reset=reset, surrogate=sur)
        rng = np.random.default_rng(4)
        x = rng.uniform(-1, 2, (5, 4))
        w = rng.uniform(-1, 1, (5, 4))

        def f(xv, lam_w):
            leak = plif_leak(lam_w)
            return (lif_sequence(xv, cfg, leak=leak, relaxed=True) * w).sum()

        px = Parameter(x, dtype=np.float64)
        pw = Parameter([0.3], dtype=np.float64)
        with Tape() as tape:
            loss = f(px, pw)
        tape.backward(loss)
        num_x = numeric_grad(lambda v: float(f(Tensor(v), Tensor([0.3])).data), x)
        num_w = numeric_grad(lambda v: float(f(Tensor(x), Tensor(v)).data), np.array([0.3]))
        assert rel_err(px.grad, num_x) < 1e-4
        assert rel_err(pw.grad, num_w) < 1e-4


class TestPLIF:
    def test_zero_weight(self):
        assert plif_leak(Tensor([0.0])).data[0] == 0.5

    def test_large_weight_forgets(self):
        assert plif_leak(Tensor([50.0])).data[0] < 1e-12

    def test_gradient(self):
        w = Parameter([0.7], dtype=np.float64)
        with Tape() as tape:
            lam = plif_leak(w).sum()
        tape.backward(lam)
        sig = 1 / (1 + math.exp(-0.7))
        assert w.grad[0] == pytest.approx(-sig * (1 - sig))
        num = numeric_grad(lambda v: float(plif_leak(Tensor(v)).data[0]), np.array([0.7]))
        assert rel_err(w.grad, num) < 1e-6


class TestSpikeRate:
    def test_counts(self):
        m = SpikeMeter()
        a = np.zeros(40)
        a[:8] = 1
        m.record(a)
        assert spike_rate(m) == 0.2

    def test_extremes(self):
        m = SpikeMeter()
        m.record(np.zeros(10))
        assert spike_rate(m) == 0.0
        m.reset()
        m.record(np.ones(10))
        assert spike_rate(m) == 1.0

    def test_empty(self):
        with pytest.raises(PreconditionError):
            spike_rate(SpikeMeter())


class TestSpikingLayer:
    def test_silent_input(self):
        layer = SpikingLayer(6, 4, rng=np.random.default_rng(0))
        out = spiking_linear(Tensor(np.zeros((4, 3, 6)), binary=True), layer)
        assert out.binary and not out.data.any()

    def test_binary_output(self):
        layer = SpikingLayer(6, 4, rng=np.random.default_rng(0))
        x = (np.random.default_rng(1).uniform(size=(4, 10, 6)) > 0.5).astype(np.float32)
        out = layer(Tensor(x, binary=True))
        assert set(np.unique(out.data)) <= {0.0, 1.0}
        assert 0.0 <= spike_rate(layer.rate_meter) <= 1.0

    def test_rejects_real_input(self):
        layer = SpikingLayer(3, 2)
        with pytest.raises(ContractError):
            layer(Tensor(np.full((2, 1, 3), 0.5)))

    def test_weight_gradient_through_surrogate(self):
        rng = np.random.default_rng(5)
        layer = SpikingLayer(5, 3, lif=LIFConfig(lam=0.5, surrogate=Surrogate("atan", alpha=2.0)), rng=rng, dtype=np.float64)
        layer.relaxed = True
        x = (rng.uniform(size=(4, 6, 5)) > 0.5).astype(np.float64)
        readout = rng.uniform(-1, 1, (4, 6, 3))

        with Tape() as tape:
            loss = (layer(Tensor(x, binary=True)) * readout).sum()
        tape.backward(loss)
        w0 = layer.op.weight.data.copy()

        def f(w):
            layer.op.weight.data = w
            return float((layer(Tensor(x, binary=True)) * readout).sum().data)

        num = numeric_grad(f, w0)
        layer.op.weight.data = w0
        assert np.all(np.isfinite(layer.op.weight.grad))
        assert rel_err(layer.op.weight.grad, num) < 1e-3

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gradcheck import numeric_grad, rel_err
from spikepose.numerics import (
    SGD,
    Adam,
    BatchNormState,
    CheckpointFormatError,
    ContractError,
    DimensionError,
    NumericError,
    Parameter,
    PreconditionError,
    Tape,
    TapeStateError,
    Tensor,
    avg_pool2d,
    backward,
    batch_norm,
    conv2d,
    cosine_lr,
    linear,
    matmul,
    read_checkpoint,
    softmax_rows,
    write_checkpoint,
)
from spikepose.numerics.checkpoint import dumps, loads

RNG = np.random.default_rng(7)


def grad_of(fn, *arrays):
    """Run ``fn`` on fresh float64 parameters and return their tape gradients."""
    params = [Parameter(a, dtype=np.float64) for a in arrays]
    with Tape() as tape:
        loss = fn(*params)
    tape.backward(loss)
    return [p.grad for p in params]


def value_of(fn, *arrays):
    return float(fn(*[Tensor(np.asarray(a, dtype=np.float64)) for a in arrays]).data)


class TestTensor:
    def test_binary_contract(self):
        Tensor([0, 1, 1], binary=True)
        with pytest.raises(ContractError):
            Tensor([0, 2], binary=True)

    def test_parameter_grad_shape(self):
        p = Parameter(np.ones((2, 3)), name="w")
        assert p.grad.shape == p.value.shape


class TestMatmul:
    def test_identity(self):
        out = matmul(Tensor(np.eye(2)), Tensor([[5.0], [7.0]]))
        np.testing.assert_array_equal(out.data, [[5], [7]])

    def test_hand_product(self):
        out = matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]]))
        np.testing.assert_array_equal(out.data, [[3], [7]])

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_gradient_wrt_x(self):
        A = RNG.uniform(-2, 2, (4, 3))
        x = RNG.uniform(-2, 2, (3, 2))
        (gx,) = grad_of(lambda x: matmul(Tensor(A), x).sum(), x)
        num = numeric_grad(lambda v: value_of(lambda x: matmul(Tensor(A), x).sum(), v), x)
        assert rel_err(gx, num) < 1e-4

    def test_batched_gradients(self):
        a = RNG.uniform(-2, 2, (2, 3, 4))
        b = RNG.uniform(-2, 2, (2, 4, 5))
        w = RNG.uniform(-1, 1, (2, 3, 5))

        def f(a, b):
            return (matmul(a, b) * w).sum()

        ga, gb = grad_of(f, a, b)
        assert rel_err(ga, numeric_grad(lambda v: value_of(f, v, b), a)) < 1e-4
        assert rel_err(gb, numeric_grad(lambda v: value_of(f, a, v), b)) < 1e-4


class TestConv2d:
    def test_identity_kernel(self):
        x = RNG.uniform(-1, 1, (5, 5, 1))
        out = conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))), pad=0)
        np.testing.assert_allclose(out.data, x)

    def test_ones_kernel_on_one_hot(self):
        x = np.zeros((5, 5, 1))
        x[2, 2, 0] = 1
        out = conv2d(Tensor(x), Tensor(np.ones((3, 3, 1, 1))), pad=1).data[..., 0]
        expected = np.zeros((5, 5))
        expected[1:4, 1:4] = 1
        np.testing.assert_array_equal(out, expected)

    def test_stride_halves(self):
        out = conv2d(Tensor(np.ones((2, 8, 8, 3))), Tensor(np.ones((3, 3, 3, 4))), stride=2)
        assert out.shape == (2, 4, 4, 4)

    def test_errors(self):
        with pytest.raises(DimensionError):
            conv2d(Tensor(np.ones((4, 4, 2))), Tensor(np.ones((3, 3, 3, 1))))
        with pytest.raises(DimensionError):
            conv2d(Tensor(np.ones((4, 4, 1))), Tensor(np.ones((3, 3, 1, 1))), stride=0)

    @pytest.mark.parametrize("stride", [1, 2])
    def test_gradient(self, stride):
        x = RNG.uniform(-2, 2, (2, 5, 5, 2))
        k = RNG.uniform(-2, 2, (3, 3, 2, 3))
        ho = (5 + 2 - 3) // stride + 1
        w = RNG.uniform(-1, 1, (2, ho, ho, 3))

        def f(x, k):
            return (conv2d(x, k, stride=stride) * w).sum()

        gx, gk = grad_of(f, x, k)
        assert rel_err(gx, numeric_grad(lambda v: value_of(f, v, k), x)) < 1e-4
        assert rel_err(gk, numeric_grad(lambda v: value_of(f, x, v), k)) < 1e-4


class TestBatchNorm:
    def test_two_sample_batch(self):
        state = BatchNormState.fresh(1, eps=1e-12, dtype=np.float64)
        out = batch_norm(Tensor([[1.0], [3.0]]), Tensor([1.0]), Tensor([0.0]), state)
        np.testing.assert_allclose(out.data[:, 0], [-1.0, 1.0], atol=1e-9)

    def test_standardised_input_passes_through(self):
        x = np.array([[-1.0], [1.0]])
        state = BatchNormState.fresh(1, dtype=np.float64)
        out = batch_norm(Tensor(x), Tensor([1.0]), Tensor([0.0]), state)
        np.testing.assert_allclose(out.data, x, atol=1e-5)

    def test_running_stats_update(self):
        state = BatchNormState.fresh(1, dtype=np.float64)
        batch_norm(Tensor([[1.0], [3.0]]), Tensor([1.0]), Tensor([0.0]), state)
        np.testing.assert_allclose(state.running_mean, [0.2])
        # unbiased batch variance 2.0
        np.testing.assert_allclose(state.running_var, [0.9 + 0.1 * 2.0])

    def test_eval_mode_uses_running_stats(self):
        state = BatchNormState(np.array([1.0]), np.array([4.0]), eps=0.0)
        out = batch_norm(Tensor([[5.0]]), Tensor([1.0]), Tensor([0.0]), state, training=False)
        np.testing.assert_allclose(out.data, [[2.0]])

    def test_empty_batch(self):
        with pytest.raises(PreconditionError):
            batch_norm(Tensor(np.zeros((0, 2))), Tensor(np.ones(2)), Tensor(np.zeros(2)), BatchNormState.fresh(2))

    @pytest.mark.parametrize("training", [True, False])
    def test_gradient(self, training):
        x = RNG.uniform(-2, 2, (3, 4, 2))
        gamma = RNG.uniform(0.5, 2, 2)
        beta = RNG.uniform(-1, 1, 2)
        w = RNG.uniform(-1, 1, (3, 4, 2))
        stats = (np.array([0.3, -0.2]), np.array([1.5, 0.7]))

        def f(x, g, b):
            st = BatchNormState(stats[0].copy(), stats[1].copy())
            return (batch_norm(x, g, b, st, training=training) * w).sum()

        grads = grad_of(f, x, gamma, beta)
        args = [x, gamma, beta]
        for i, g in enumerate(grads):
            def fi(v, i=i):
                a = list(args)
                a[i] = v
                return value_of(f, *a)

            assert rel_err(g, numeric_grad(fi, args[i])) < 1e-4


class TestAvgPool:
    def test_all_ones(self):
        assert avg_pool2d(Tensor(np.ones((4, 4, 1)))).data[0] == 1.0

    def test_checkerboard(self):
        x = np.array([[0.0, 1.0], [1.0, 0.0]])[..., None]
        assert avg_pool2d(Tensor(x)).data[0] == 0.5

    def test_degenerate(self):
        x = RNG.uniform(size=(3, 1, 1, 2))
        np.testing.assert_array_equal(avg_pool2d(Tensor(x)).data, x[:, 0, 0, :])


class TestSoftmax:
    def test_symmetric_row(self):
        np.testing.assert_allclose(softmax_rows(Tensor([[0.0, 0.0]])).data, [[0.5, 0.5]])

    def test_log_two(self):
        out = softmax_rows(Tensor([[np.log(2.0), 0.0]], )).data
        np.testing.assert_allclose(out, [[2 / 3, 1 / 3]], atol=1e-7)

    def test_nan(self):
        with pytest.raises(NumericError):
            softmax_rows(Tensor([[np.nan, 0.0]]))

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (3, 7), elements=st.floats(-1e3, 1e3)))
    def test_rows_sum_to_one(self, x):
        out = softmax_rows(Tensor(x)).data
        assert np.all(out >= 0)
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-6)

    def test_gradient(self):
        x = RNG.uniform(-2, 2, (3, 5))
        w = RNG.uniform(-1, 1, (3, 5))
        (g,) = grad_of(lambda x: (softmax_rows(x) * w).sum(), x)
        num = numeric_grad(lambda v: value_of(lambda x: (softmax_rows(x) * w).sum(), v), x)
        assert rel_err(g, num) < 1e-4


class TestBackward:
    def test_sum_of_parameter(self):
        p = Parameter(RNG.uniform(size=(2, 3)), dtype=np.float64)
        with Tape() as tape:
            loss = p.sum()
        backward(tape, loss)
        np.testing.assert_array_equal(p.grad, np.ones((2, 3)))

    def test_linear_weight_grad_is_outer_product(self):
        x = RNG.uniform(-1, 1, 4)
        W = Parameter(RNG.uniform(-1, 1, (3, 4)), dtype=np.float64)
        with Tape() as tape:
            loss = matmul(W, Tensor(x)).sum()
        tape.backward(loss)
        np.testing.assert_allclose(W.grad, np.outer(np.ones(3), x))

    def test_two_layer_chain(self):
        x = RNG.uniform(-2, 2, (5, 3))
        w1 = RNG.uniform(-1, 1, (3, 4))
        b1 = RNG.uniform(-1, 1, 4)
        w2 = RNG.uniform(-1, 1, (4, 2))

        def f(w1, b1, w2):
            h = linear(Tensor(x), w1, b1)
            h = h * h.sin()
            return (linear(h, w2) ** 2).mean()

        grads = grad_of(f, w1, b1, w2)
        args = [w1, b1, w2]
        for i, g in enumerate(grads):
            def fi(v, i=i):
                a = list(args)
                a[i] = v
                return value_of(f, *a)

            assert rel_err(g, numeric_grad(fi, args[i])) < 1e-4

    def test_untouched_parameters(self):
        used = Parameter(np.ones(2))
        unused = Parameter(np.ones(2))
        unused.grad[:] = 5.0
        with Tape() as tape:
            loss = (used * 3.0).sum()
        tape.backward(loss)
        np.testing.assert_array_equal(unused.grad, [5.0, 5.0])
        np.testing.assert_array_equal(used.grad, [3.0, 3.0])

    def test_backward_twice_is_error(self):
        p = Parameter(np.ones(2))
        with Tape() as tape:
            loss = p.sum()
        tape.backward(loss)
        with pytest.raises(TapeStateError):
            tape.backward(loss)
        tape.reset()

    def test_replay_is_deterministic(self):
        def run():
            rng = np.random.default_rng(3)
            x = rng.uniform(-1, 1, (2, 6, 6, 2)).astype(np.float32)
            k = Parameter(rng.uniform(-1, 1, (3, 3, 2, 4)))
            with Tape() as tape:
                loss = (conv2d(Tensor(x), k) ** 2).sum()
            tape.backward(loss)
            return k.grad

        np.testing.assert_array_equal(run(), run())


class TestOptim:
    def test_zero_lr_leaves_params(self):
        p = Parameter(np.array([1.0, -2.0]))
        p.grad[:] = [0.3, 0.1]
        for opt in (SGD([p], lr=0.0), Adam([p], lr=0.0)):
            opt.step()
            np.testing.assert_array_equal(p.data, [1.0, -2.0])

    def test_sgd_update(self):
        p = Parameter(np.array([1.0]), dtype=np.float64)
        p.grad[:] = 0.5
        SGD([p], lr=0.1).step()
        np.testing.assert_allclose(p.data, [0.95])

    def test_cosine_schedule(self):
        assert cosine_lr(0.01, 0, 20) == 0.01
        assert cosine_lr(0.01, 20, 20) == pytest.approx(0.0, abs=1e-18)
        assert cosine_lr(0.01, 10, 20) == pytest.approx(0.005)

    def test_negative_lr_rejected(self):
        with pytest.raises(PreconditionError):
            SGD([Parameter(np.ones(1))], lr=-1.0)

    def test_adam_descends(self):
        p = Parameter(np.array([3.0]), dtype=np.float64)
        opt = Adam([p], lr=0.1)
        for _ in range(200):
            opt.zero_grad()
            with Tape() as tape:
                loss = (p * p).sum()
            tape.backward(loss)
            opt.step()
        assert abs(p.data[0]) < 0.05


class TestCheckpoint:
    def test_roundtrip_bytes(self, tmp_path):
        tensors = {
            "backbone.stem.weight": RNG.uniform(size=(3, 3, 4, 16)).astype(np.float32),
            "flags": np.array([[0, 1], [1, 1]], dtype=np.uint8),
            "scalar": np.array(2.5, dtype=np.float32),
        }
        path = tmp_path / "m.snnc"
        write_checkpoint(path, tensors)
        back = read_checkpoint(path)
        assert list(back) == list(tensors)
        assert back["flags"].dtype == np.uint8
        path2 = tmp_path / "m2.snnc"
        write_checkpoint(path2, back)
        assert path.read_bytes() == path2.read_bytes()

    def test_header_layout(self):
        blob = dumps({"a": np.zeros((2,), np.float32)})
        assert blob[:4] == b"SNNC"
        assert int.from_bytes(blob[4:8], "little") == 1
        assert int.from_bytes(blob[8:12], "little") == 1
        # name len u16 + 'a' + ndim u8 + dim u32 + dtype u8 + 8 payload bytes
        assert len(blob) == 12 + 2 + 1 + 1 + 4 + 1 + 8

    def test_bad_magic(self):
        blob = dumps({"a": np.zeros(1, np.float32)})
        with pytest.raises(CheckpointFormatError):
            loads(b"XXXX" + blob[4:])

    def test_truncated(self):
        blob = dumps({"a": np.zeros(4, np.float32)})
        with pytest.raises(CheckpointFormatError):
            loads(blob[:-3])

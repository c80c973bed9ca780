import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from permcast import numerics as nm
from permcast.errors import GradcheckProtocolError
from permcast.numerics import OptimizerState, adam_step, clip_global_norm


def softmax_longdouble(x):
    """High-precision scalar reference for softmax."""
    x = np.asarray(x, dtype=np.longdouble)
    e = np.exp(x - x.max())
    return (e / e.sum()).astype(np.float64)


class TestSoftmax:
    def test_symmetric_pair(self):
        out = nm.softmax(nm.Tensor([0.0, 0.0]), axis=0)
        np.testing.assert_allclose(out.data, [0.5, 0.5])

    def test_huge_inputs_do_not_overflow(self):
        out = nm.softmax(nm.Tensor([1e9, 1e9]), axis=0)
        assert np.all(np.isfinite(out.data))
        np.testing.assert_allclose(out.data, [0.5, 0.5])

    def test_against_longdouble_reference(self):
        x = np.array([1.0, 2.0, 3.0])
        out = nm.softmax(nm.Tensor(x), axis=0)
        np.testing.assert_allclose(out.data, softmax_longdouble(x), rtol=1e-14)

    def test_invalid_axis(self):
        with pytest.raises(ValueError):
            nm.softmax(nm.Tensor([1.0, 2.0]), axis=3)

    @given(
        st.lists(
            st.floats(min_value=-1e6, max_value=1e6, allow_nan=False),
            min_size=1,
            max_size=8,
        )
    )
    @settings(max_examples=100, deadline=None)
    def test_rows_sum_to_one(self, values):
        out = nm.softmax(nm.Tensor(values), axis=0)
        assert abs(out.data.sum() - 1.0) < 1e-6
        assert np.all(out.data >= 0.0)


class TestLayerNorm:
    def setup_method(self):
        self.gain = nm.Tensor(np.ones(3))
        self.bias = nm.Tensor(np.zeros(3))

    def test_constant_row_maps_to_bias(self):
        out = nm.layer_norm(nm.Tensor([[5.0, 5.0, 5.0]]), self.gain, self.bias)
        np.testing.assert_allclose(out.data, np.zeros((1, 3)))

    def test_hand_computed_row(self):
        gain = nm.Tensor(np.ones(2))
        bias = nm.Tensor(np.zeros(2))
        out = nm.layer_norm(nm.Tensor([[1.0, -1.0]]), gain, bias)
        np.testing.assert_allclose(out.data, [[1.0, -1.0]], atol=1e-4)

    def test_zero_gain_broadcasts_bias(self):
        gain = nm.Tensor(np.zeros(3))
        bias = nm.Tensor([1.0, 2.0, 3.0])
        out = nm.layer_norm(nm.Tensor([[0.3, -4.0, 2.2]]), gain, bias)
        np.testing.assert_allclose(out.data, [[1.0, 2.0, 3.0]])

    def test_row_statistics(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(5, 16), scale=3.0)
        gain = nm.Tensor(np.ones(16))
        bias = nm.Tensor(np.zeros(16))
        out = nm.layer_norm(nm.Tensor(x), gain, bias).data
        np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-10)
        np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-3)

    def test_empty_last_dim_rejected(self):
        with pytest.raises(ValueError):
            nm.layer_norm(nm.Tensor(np.zeros((2, 0))), nm.Tensor([]), nm.Tensor([]))


class TestBackward:
    def test_sum_gradient_is_ones(self):
        x = nm.Tensor(np.arange(4.0).reshape(2, 2), requires_grad=True)
        grads = nm.backward(nm.sum(x))
        np.testing.assert_array_equal(grads[x], np.ones((2, 2)))

    def test_elementwise_square(self):
        x = nm.Tensor([1.0, 2.0], requires_grad=True)
        nm.backward(nm.sum(nm.mul(x, x)))
        np.testing.assert_allclose(x.grad, [2.0, 4.0])

    def test_non_scalar_rejected(self):
        x = nm.Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ValueError):
            nm.backward(nm.mul(x, x))

    def test_detached_graph_gives_empty_map(self):
        x = nm.Tensor([1.0, 2.0])
        assert nm.backward(nm.sum(nm.mul(x, x))) == {}

    def test_two_layer_net_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        w1 = nm.Tensor(rng.normal(size=(4, 6), scale=0.5), requires_grad=True)
        w2 = nm.Tensor(rng.normal(size=(6, 2), scale=0.5), requires_grad=True)
        x = np.asarray(rng.normal(size=(3, 4)))
        y = np.asarray(rng.normal(size=(3, 2)))

        def forward():
            h = nm.tanh(nm.matmul(nm.Tensor(x), w1))
            out = nm.matmul(h, w2)
            return nm.mean(nm.mul(nm.sub(out, y), nm.sub(out, y)))

        report = nm.finite_diff_gradcheck(forward, {"w1": w1, "w2": w2}, tolerance=1e-4)
        assert report.passed, str(report)


class TestPrimitiveGradients:
    """Each differentiable primitive against central differences (float64)."""

    @pytest.mark.parametrize(
        "name, builder",
        [
            ("add", lambda a, b: nm.sum(nm.add(a, b))),
            ("sub", lambda a, b: nm.sum(nm.sub(a, b))),
            ("mul", lambda a, b: nm.sum(nm.mul(a, b))),
            ("div", lambda a, b: nm.sum(nm.div(a, nm.add(nm.mul(b, b), 1.0)))),
            ("matmul", lambda a, b: nm.sum(nm.matmul(a, nm.transpose(b)))),
        ],
    )
    def test_binary_ops(self, name, builder):
        rng = np.random.default_rng(3)
        a = nm.Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        b = nm.Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        report = nm.finite_diff_gradcheck(
            lambda: builder(a, b), {"a": a, "b": b}, tolerance=1e-6
        )
        assert report.passed, f"{name}: {report}"

    @pytest.mark.parametrize(
        "name, builder",
        [
            ("exp", lambda a: nm.sum(nm.exp(a))),
            ("tanh", lambda a: nm.sum(nm.tanh(a))),
            ("abs", lambda a: nm.sum(nm.abs(a))),
            ("pow", lambda a: nm.sum(nm.pow(nm.add(nm.mul(a, a), 1.0), 1.5))),
            ("softmax", lambda a: nm.sum(nm.mul(nm.softmax(a, axis=-1), nm.softmax(a, axis=-1)))),
            ("mean", lambda a: nm.mean(nm.mul(a, a))),
            ("reshape", lambda a: nm.sum(nm.mul(nm.reshape(a, (4, 3)), 2.0))),
            ("transpose", lambda a: nm.sum(nm.mul(nm.transpose(a), nm.transpose(a)))),
            ("slice", lambda a: nm.sum(nm.mul(a[:, 1:], a[:, 1:]))),
            ("gelu", lambda a: nm.sum(nm.gelu(a))),
            ("broadcast", lambda a: nm.sum(nm.broadcast_to(nm.mean(a, axis=0, keepdims=True), (3, 4)))),
        ],
    )
    def test_unary_ops(self, name, builder):
        rng = np.random.default_rng(5)
        a = nm.Tensor(rng.normal(size=(3, 4)) + 0.1, requires_grad=True)
        report = nm.finite_diff_gradcheck(lambda: builder(a), {"a": a}, tolerance=1e-5)
        assert report.passed, f"{name}: {report}"

    def test_concat(self):
        rng = np.random.default_rng(6)
        a = nm.Tensor(rng.normal(size=(2, 3)), requires_grad=True)
        b = nm.Tensor(rng.normal(size=(2, 2)), requires_grad=True)

        def forward():
            c = nm.concat([a, b], axis=-1)
            return nm.sum(nm.mul(c, c))

        report = nm.finite_diff_gradcheck(forward, {"a": a, "b": b}, tolerance=1e-6)
        assert report.passed, str(report)

    def test_dropout_with_pinned_seed(self):
        rng = np.random.default_rng(8)
        a = nm.Tensor(rng.normal(size=(4, 4)), requires_grad=True)

        def forward():
            return nm.sum(nm.mul(nm.dropout(a, 0.4, seed=123), 1.0))

        report = nm.finite_diff_gradcheck(forward, {"a": a}, tolerance=1e-6)
        assert report.passed, str(report)

    def test_layer_norm_composite(self):
        rng = np.random.default_rng(9)
        x = nm.Tensor(rng.normal(size=(3, 5)), requires_grad=True)
        gain = nm.Tensor(rng.normal(size=5), requires_grad=True)
        bias = nm.Tensor(rng.normal(size=5), requires_grad=True)

        def forward():
            return nm.sum(nm.mul(nm.layer_norm(x, gain, bias), 0.5))

        report = nm.finite_diff_gradcheck(
            forward, {"x": x, "gain": gain, "bias": bias}, tolerance=1e-5
        )
        assert report.passed, str(report)


def scalar_adam_reference(grad, steps, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8, wd=1e-5):
    """Standalone scalar Adam with decoupled weight decay (oracle)."""
    p, m, v = 1.0, 0.0, 0.0
    for t in range(1, steps + 1):
        m = b1 * m + (1 - b1) * grad
        v = b2 * v + (1 - b2) * grad * grad
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        p -= lr * (m_hat / (v_hat**0.5 + eps) + wd * p)
    return p


class TestAdam:
    def test_zero_gradients_only_decay(self):
        p = nm.Tensor(np.full((2, 2), 3.0), requires_grad=True)
        state = OptimizerState()
        adam_step({"p": p}, {"p": np.zeros((2, 2))}, state)
        expected = 3.0 * (1.0 - state.base_lr * state.weight_decay)
        np.testing.assert_allclose(p.data, expected, rtol=1e-12)
        assert state.step == 1

    def test_clip_halves_at_double_norm(self):
        grads = {"a": np.array([6.0, 0.0]), "b": np.array([0.0, 0.0])}
        clipped, norm = clip_global_norm(grads, 3.0)
        assert norm == pytest.approx(6.0)
        np.testing.assert_allclose(clipped["a"], [3.0, 0.0])

    def test_scalar_trajectory_matches_reference(self):
        p = nm.Tensor(np.array([1.0]), requires_grad=True)
        state = OptimizerState(clip_norm=0.0)
        for _ in range(3):
            adam_step({"p": p}, {"p": np.array([0.5])}, state)
        np.testing.assert_allclose(
            p.data, [scalar_adam_reference(0.5, 3)], rtol=1e-12
        )

    def test_shape_mismatch_rejected(self):
        p = nm.Tensor(np.zeros((2, 2)), requires_grad=True)
        with pytest.raises(ValueError):
            adam_step({"p": p}, {"p": np.zeros(3)}, OptimizerState())

    def test_milestone_decay_non_increasing(self):
        state = OptimizerState(base_lr=1e-3, milestones=(1, 10, 25, 40), decay_factor=0.5)
        lrs = []
        for epoch in range(50):
            state.epoch = epoch
            lrs.append(state.effective_lr())
        assert all(b <= a for a, b in zip(lrs, lrs[1:]))
        assert lrs[0] == pytest.approx(1e-3)
        assert lrs[1] == pytest.approx(5e-4)
        assert lrs[10] == pytest.approx(2.5e-4)
        assert lrs[49] == pytest.approx(1e-3 * 0.5**4)

    @given(
        st.lists(
            st.floats(min_value=-100, max_value=100, allow_nan=False),
            min_size=1,
            max_size=6,
        )
    )
    @settings(max_examples=100, deadline=None)
    def test_clip_bound_property(self, values):
        grads = {"g": np.asarray(values)}
        clipped, _ = clip_global_norm(grads, 3.0)
        assert np.linalg.norm(clipped["g"]) <= 3.0 + 1e-9


class TestGradcheckHarness:
    def test_linear_quadratic_is_exact(self):
        rng = np.random.default_rng(21)
        w = nm.Tensor(rng.normal(size=(3, 3)), requires_grad=True)
        x = np.asarray(rng.normal(size=(2, 3)))

        def forward():
            y = nm.matmul(nm.Tensor(x), w)
            return nm.sum(nm.mul(y, y))

        report = nm.finite_diff_gradcheck(forward, {"w": w}, tolerance=1e-8, step=1e-4)
        assert report.passed, str(report)

    def test_stochastic_forward_rejected(self):
        a = nm.Tensor(np.ones((32, 32)), requires_grad=True)
        counter = iter(range(10_000))

        def forward():
            return nm.sum(nm.dropout(a, 0.5, seed=next(counter)))

        with pytest.raises(GradcheckProtocolError):
            nm.finite_diff_gradcheck(forward, {"a": a})

    def test_determinism_of_ops(self):
        rng = np.random.default_rng(2)
        x = nm.Tensor(rng.normal(size=(4, 4)))
        one = nm.softmax(x, axis=1).data
        two = nm.softmax(x, axis=1).data
        np.testing.assert_array_equal(one, two)
        d1 = nm.dropout(x, 0.3, seed=99).data
        d2 = nm.dropout(x, 0.3, seed=99).data
        np.testing.assert_array_equal(d1, d2)

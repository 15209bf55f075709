"""Autodiff engine, primitives and the optimizer."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from neuroforge import ops
from neuroforge.errors import ShapeError
from neuroforge.gradcheck import check_gradients
from neuroforge.optim import OptimState, lr_schedule, sgd_step
from neuroforge.tensor import Graph, Tensor, no_grad


def naive_conv(x, w, stride):
    """Direct nested-loop cross-correlation with (K-1)/2 zero padding."""
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    p = (k - 1) // 2
    ho, wo = -(-h // stride), -(-wd // stride)
    out = np.zeros((n, o, ho, wo))
    for b in range(n):
        for f in range(o):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for ch in range(c):
                        for di in range(k):
                            for dj in range(k):
                                r, s = i * stride + di - p, j * stride + dj - p
                                if 0 <= r < h and 0 <= s < wd:
                                    acc += x[b, ch, r, s] * w[f, ch, di, dj]
                    out[b, f, i, j] = acc
    return out


class TestTensor:
    def test_float32_storage(self):
        t = Tensor([1, 2, 3])
        assert t.data.dtype == np.float32
        assert t.shape == (3,) and t.size == 3

    def test_float64_is_kept(self):
        assert Tensor(np.zeros(2)).data.dtype == np.float64

    def test_grad_shape_matches(self):
        x = Tensor(np.ones((2, 3), np.float32), requires_grad=True)
        ops.sum_all(ops.mul(x, x)).backward()
        assert x.grad.shape == x.shape
        np.testing.assert_allclose(x.grad, 2.0)

    def test_graph_order_is_topological(self):
        a = Tensor(np.ones(3, np.float32), requires_grad=True)
        b = ops.relu(a)
        c = ops.add(b, a)
        d = ops.sum_all(ops.mul(c, b))
        graph = Graph.trace(d)
        graph.check_order()
        visited = graph.backward()
        assert [n._seq for n in visited] == sorted((n._seq for n in graph.nodes), reverse=True)

    def test_shared_subexpression_accumulates(self):
        # d/dx of (x*x + x) = 2x + 1
        x = Tensor(np.array([1.5, -2.0], np.float32), requires_grad=True)
        ops.sum_all(ops.add(ops.mul(x, x), x)).backward()
        np.testing.assert_allclose(x.grad, [4.0, -3.0])

    def test_no_grad_records_nothing(self):
        x = Tensor(np.ones(2, np.float32), requires_grad=True)
        with no_grad():
            y = ops.mul(x, x)
        assert y.is_leaf and not y.requires_grad

    def test_operator_sugar(self):
        a, b = Tensor([3.0]), Tensor([1.0])
        np.testing.assert_allclose((a - b).data, [2.0])
        np.testing.assert_allclose((2 - a).data, [-1.0])
        np.testing.assert_allclose((-a * b + a).data, [0.0])

    def test_deterministic_backward(self):
        rng = np.random.default_rng(3)
        x0 = rng.standard_normal((2, 3, 6, 6)).astype(np.float32)
        w0 = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)
        grads = []
        for _ in range(2):
            x, w = Tensor(x0, requires_grad=True), Tensor(w0, requires_grad=True)
            ops.sum_all(ops.relu(ops.conv2d(x, w))).backward()
            grads.append((x.grad.tobytes(), w.grad.tobytes()))
        assert grads[0] == grads[1]


class TestConv2d:
    def test_pointwise_scaling(self):
        out = ops.conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.full((1, 1, 1, 1), 2.0)))
        np.testing.assert_array_equal(out.data, np.full((1, 1, 3, 3), 2.0))

    def test_stride_two_output_extent(self):
        out = ops.conv2d(Tensor(np.ones((1, 1, 4, 4))), Tensor(np.ones((1, 1, 3, 3))), stride=2)
        assert out.shape == (1, 1, 2, 2)

    @pytest.mark.parametrize("stride", [1, 2, 3])
    @pytest.mark.parametrize("k", [1, 3, 5, 7])
    def test_matches_nested_loop_oracle(self, k, stride):
        rng = np.random.default_rng(k * 10 + stride)
        x = rng.standard_normal((2, 3, 8, 7)).astype(np.float32)
        w = rng.standard_normal((5, 3, k, k)).astype(np.float32)
        out = ops.conv2d(Tensor(x), Tensor(w), stride).data
        np.testing.assert_allclose(out, naive_conv(x, w, stride), atol=1e-5)

    def test_channel_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(1, 2, 4, 4\).*\(1, 3, 3, 3\)"):
            ops.conv2d(Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((1, 3, 3, 3))))

    def test_even_kernel_rejected(self):
        with pytest.raises(ShapeError):
            ops.conv2d(Tensor(np.ones((1, 1, 4, 4))), Tensor(np.ones((1, 1, 2, 2))))

    @pytest.mark.parametrize("stride", [1, 2, 3])
    @pytest.mark.parametrize("k", [1, 3, 5])
    def test_gradients(self, k, stride):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((2, 2, 6, 5))
        w = rng.standard_normal((3, 2, k, k))
        assert check_gradients(lambda a, b: ops.conv2d(a, b, stride), [x, w], rng) < 1e-6


class TestBatchNorm:
    def _run(self, x, gamma, beta, training=True):
        c = x.shape[1]
        rm, rv = np.zeros(c, np.float32), np.ones(c, np.float32)
        out = ops.batch_norm(Tensor(x), Tensor(gamma), Tensor(beta), rm, rv, training)
        return out.data, rm, rv

    def test_constant_input_gives_zero(self):
        out, _, _ = self._run(np.full((4, 2, 3, 3), 5.0, np.float32), np.ones(2), np.zeros(2))
        np.testing.assert_allclose(out, 0.0, atol=1e-6)

    def test_zero_gamma_gives_beta(self):
        rng = np.random.default_rng(0)
        out, _, _ = self._run(rng.standard_normal((4, 3, 2, 2)).astype(np.float32),
                              np.zeros(3), np.array([1.0, -2.0, 0.5]))
        np.testing.assert_allclose(out, np.broadcast_to(np.array([1.0, -2.0, 0.5])[None, :, None, None],
                                                        out.shape), atol=1e-6)

    def test_batch_statistics(self):
        rng = np.random.default_rng(1)
        x = (3 * rng.standard_normal((8, 4, 5, 5)) + 2).astype(np.float32)
        out, _, _ = self._run(x, np.ones(4), np.zeros(4))
        np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0.0, atol=1e-5)
        np.testing.assert_allclose(out.var(axis=(0, 2, 3)), 1.0, atol=1e-3)

    def test_running_statistics_update(self):
        x = np.arange(16, dtype=np.float32).reshape(4, 1, 2, 2)
        _, rm, rv = self._run(x, np.ones(1), np.zeros(1))
        # batch mean 7.5, population variance 21.25
        np.testing.assert_allclose(rm, [0.75], rtol=1e-6)
        np.testing.assert_allclose(rv, [0.9 + 0.1 * 21.25], rtol=1e-6)

    def test_eval_uses_running_statistics(self):
        x = np.full((2, 1, 2, 2), 3.0, np.float32)
        out, rm, _ = self._run(x, np.ones(1), np.zeros(1), training=False)
        np.testing.assert_allclose(out, 3.0 / np.sqrt(1 + 1e-5), rtol=1e-6)
        np.testing.assert_array_equal(rm, [0.0])

    def test_empty_batch_rejected(self):
        with pytest.raises(ShapeError):
            self._run(np.zeros((0, 2, 2, 2), np.float32), np.ones(2), np.zeros(2))

    @pytest.mark.parametrize("training", [True, False])
    def test_gradients(self, training):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((3, 2, 3, 3))

        def fn(a, g, b):
            return ops.batch_norm(a, g, b, np.zeros(2), np.ones(2), training)

        assert check_gradients(fn, [x, rng.standard_normal(2), rng.standard_normal(2)], rng) < 1e-6


class TestPrimitives:
    def test_relu(self):
        np.testing.assert_array_equal(ops.relu(Tensor([-1.0, 0.0, 2.0])).data, [0, 0, 2])

    def test_softmax_uniform(self):
        np.testing.assert_allclose(ops.softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, rtol=1e-6)

    def test_softmax_is_shift_stable(self):
        out = ops.softmax(Tensor(np.array([1000.0, 1000.0])), axis=0).data
        np.testing.assert_allclose(out, [0.5, 0.5])

    def test_cross_entropy_uniform(self):
        loss = ops.cross_entropy(Tensor(np.zeros((4, 10))), [0, 3, 9, 5])
        assert loss.item() == pytest.approx(2.302585, abs=1e-6)

    def test_cross_entropy_label_out_of_range(self):
        with pytest.raises(ValueError):
            ops.cross_entropy(Tensor(np.zeros((2, 3))), [0, 3])

    def test_global_avg_pool(self):
        x = np.arange(8, dtype=np.float32).reshape(1, 2, 2, 2)
        np.testing.assert_allclose(ops.global_avg_pool(Tensor(x)).data, [[1.5, 5.5]])

    def test_dense(self):
        out = ops.dense(Tensor([[1.0, 2.0]]), Tensor([[1.0, 0.0], [0.0, 1.0]]), Tensor([0.5, -0.5]))
        np.testing.assert_allclose(out.data, [[1.5, 1.5]])

    def test_dense_shape_error(self):
        with pytest.raises(ShapeError):
            ops.dense(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 2))))

    def test_slice_channels_rejects_widening(self):
        with pytest.raises(ShapeError):
            ops.slice_channels(Tensor(np.ones((1, 2, 2, 2))), 3)

    @pytest.mark.parametrize("name", ["add", "mul", "tanh", "softmax", "gap", "dense", "ce", "concat",
                                      "add_n", "roll", "slice", "index"])
    def test_gradients(self, name):
        rng = np.random.default_rng(11)
        a, b = rng.standard_normal((2, 3, 2, 2)), rng.standard_normal((2, 3, 2, 2))
        cases = {
            "add": (lambda x, y: ops.add(x, y), [a, rng.standard_normal((1, 3, 1, 1))]),
            "mul": (lambda x, y: ops.mul(x, y), [a, b]),
            "tanh": (ops.tanh_op, [a]),
            "softmax": (lambda x: ops.softmax(x, axis=1), [a]),
            "gap": (ops.global_avg_pool, [a]),
            "dense": (ops.dense, [rng.standard_normal((3, 4)), rng.standard_normal((4, 2)),
                                  rng.standard_normal(2)]),
            "ce": (lambda x: ops.cross_entropy(x, [1, 0, 2]), [rng.standard_normal((3, 4))]),
            "concat": (lambda x, y: ops.concat([x, y], axis=1), [a, b]),
            "add_n": (lambda x, y: ops.add_n([x, y, x]), [a, b]),
            "roll": (lambda x: ops.roll(x, (1, 1), axis=(2, 3)), [a]),
            "slice": (lambda x: ops.slice_channels(x, 2), [a]),
            "index": (lambda x: ops.index_row(x, 1), [rng.standard_normal((3, 4))]),
        }
        fn, inputs = cases[name]
        assert check_gradients(fn, inputs, rng) < 1e-6


class TestOptimizer:
    def _step(self, param, grad, **kw):
        p = Tensor(np.array([param], np.float64), requires_grad=True)
        state = OptimState(**kw)
        p.grad = np.array([grad], np.float64)
        sgd_step([p], state)
        return p, state

    def test_plain_step(self):
        p, _ = self._step(1.0, 1.0, lr=0.1, momentum=0.0, weight_decay=0.0)
        np.testing.assert_allclose(p.data, [0.9])

    def test_momentum_two_steps(self):
        p = Tensor(np.array([0.0]), requires_grad=True)
        state = OptimState(lr=0.1, momentum=0.9, weight_decay=0.0)
        for _ in range(2):
            p.grad = np.array([1.0])
            sgd_step([p], state)
        np.testing.assert_allclose(p.data, [-0.29])

    def test_weight_decay_only(self):
        p, _ = self._step(2.0, 0.0, lr=0.1, momentum=0.0, weight_decay=0.5)
        np.testing.assert_allclose(p.data, [1.9])

    def test_one_velocity_per_parameter(self):
        ps = [Tensor(np.ones((2, 2)), requires_grad=True), Tensor(np.ones(3), requires_grad=True)]
        for p in ps:
            p.grad = np.ones_like(p.data)
        state = OptimState()
        sgd_step(ps, state)
        assert [v.shape for v in state.velocity.values()] == [(2, 2), (3,)]

    def test_missing_grad(self):
        with pytest.raises(ValueError):
            sgd_step([Tensor(np.ones(2), requires_grad=True)], OptimState())

    def test_frozen_entries_stay_zero(self):
        p = Tensor(np.array([0.0, 1.0]), requires_grad=True)
        state = OptimState(lr=0.1)
        for _ in range(3):
            p.grad = np.array([5.0, 5.0])
            sgd_step([p], state, frozen={id(p): np.array([True, False])})
        assert p.data[0] == 0.0 and state.velocity[id(p)][0] == 0.0

    def test_positive_learning_rate(self):
        with pytest.raises(ValueError):
            OptimState(lr=0.0)


class TestSchedule:
    @pytest.mark.parametrize("step,expected", [(0, 0.01), (299, 0.01), (300, 2e-3), (600, 4e-4),
                                               (899, 4e-4), (900, 8e-5), (950, 8e-5)])
    def test_values(self, step, expected):
        assert lr_schedule(step, 1000, 0.01) == pytest.approx(expected, rel=1e-12)

    def test_invalid_total(self):
        with pytest.raises(ValueError):
            lr_schedule(0, 0, 0.01)

    @given(st.integers(1, 10_000), st.data())
    @settings(max_examples=100, deadline=None)
    def test_non_increasing(self, total, data):
        s = data.draw(st.integers(0, total - 2)) if total > 1 else 0
        if total > 1:
            assert lr_schedule(s + 1, total, 0.01) <= lr_schedule(s, total, 0.01)

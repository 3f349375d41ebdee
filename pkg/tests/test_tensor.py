"""Tensor engine: forward values, gradient checks against central finite
differences, and tape semantics."""

import numpy as np
import pytest

from helpers import conv2d_bruteforce, numerical_grad, rel_error

from mtsnn import tensor as T
from mtsnn.tensor import ShapeError, Tensor


def t64(arr, grad=False):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=grad)


class TestForwardValues:
    def test_matmul_identity(self):
        a = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32))
        out = T.matmul(a, Tensor(np.eye(2, dtype=np.float32)))
        np.testing.assert_array_equal(out.data, a.data)

    def test_conv2d_all_ones_valid(self):
        x = Tensor(np.ones((1, 1, 3, 3), dtype=np.float32))
        w = Tensor(np.ones((1, 1, 3, 3), dtype=np.float32))
        out = T.conv2d(x, w, padding="valid")
        oracle = conv2d_bruteforce(x.data, w.data)
        np.testing.assert_array_equal(out.data, oracle)
        assert out.data.reshape(-1)[0] == 9.0

    def test_mean(self):
        out = T.tmean(Tensor(np.array([1.0, 2.0, 3.0, 4.0], dtype=np.float32)))
        assert out.item() == 2.5

    def test_shape_mismatch_names_op_and_shapes(self):
        a = Tensor(np.zeros((2, 3), dtype=np.float32))
        b = Tensor(np.zeros((3, 2), dtype=np.float32))
        with pytest.raises(ShapeError, match=r"add.*\(2, 3\).*\(3, 2\)"):
            T.add(a, b)
        with pytest.raises(ShapeError, match="matmul"):
            T.matmul(Tensor(np.zeros((2, 3), dtype=np.float32)),
                     Tensor(np.zeros((2, 3), dtype=np.float32)))

    def test_bias_broadcast_over_batch(self):
        x = Tensor(np.zeros((4, 3), dtype=np.float32))
        b = Tensor(np.array([1.0, 2.0, 3.0], dtype=np.float32), requires_grad=True)
        out = T.add(x, b)
        assert out.shape == (4, 3)
        np.testing.assert_array_equal(out.data[2], b.data)
        grads = T.backward(T.tsum(out))
        np.testing.assert_array_equal(grads[b].data, np.full(3, 4.0))


class TestBackwardBasics:
    def test_square_gradient(self):
        w = t64([3.0], grad=True)
        grads = T.backward(T.tsum(T.mul(w, w)))
        np.testing.assert_array_equal(grads[w].data, [6.0])

    def test_fanout_adds_gradients(self):
        x = t64([1.0, -2.0], grad=True)
        g_sum = T.backward(T.tsum(x + x))[x].data
        x2 = t64([1.0, -2.0], grad=True)
        g_id = T.backward(T.tsum(x2))[x2].data
        np.testing.assert_array_equal(g_sum, 2.0 * g_id)

    def test_matmul_mean_matches_fd(self):
        rng = np.random.default_rng(42)
        xv = rng.standard_normal((3, 4))
        wv = rng.standard_normal((4, 2))
        w = t64(wv, grad=True)
        grads = T.backward(T.tmean(T.matmul(t64(xv), w)))

        def f(wa):
            return T.tmean(T.matmul(t64(xv), t64(wa))).item()

        assert rel_error(grads[w].data, numerical_grad(f, wv)) < 1e-4

    def test_backward_deterministic(self):
        rng = np.random.default_rng(0)
        xv = rng.standard_normal((5, 5)).astype(np.float32)

        def run():
            x = Tensor(xv, requires_grad=True)
            y = T.mul(x, x) + x
            return T.backward(T.tmean(T.relu(y)))[x].data

        a, b = run(), run()
        np.testing.assert_array_equal(a, b)

    def test_non_scalar_loss_rejected(self):
        x = t64([1.0, 2.0], grad=True)
        with pytest.raises(ShapeError, match="scalar"):
            T.backward(x + x)

    def test_detached_tensor_gets_no_gradient(self):
        x = t64([1.0], grad=True)
        d = x.detach()
        loss = T.tsum(T.mul(x, x) + T.mul(d, d))
        grads = T.backward(loss)
        np.testing.assert_array_equal(grads[x].data, [2.0])
        assert d not in grads and d.grad is None


def _fd_cases():
    rng = np.random.default_rng(7)
    cases = []
    for i in range(20):
        n = int(rng.integers(2, 5))
        m = int(rng.integers(2, 5))
        cases.append((i, n, m))
    return cases


class TestFiniteDifferencePrimitives:
    """Every differentiable primitive against central differences at
    float64 on >= 20 random small shapes each."""

    @pytest.mark.parametrize("case", _fd_cases())
    def test_elementwise_and_reductions(self, case):
        i, n, m = case
        rng = np.random.default_rng(100 + i)
        av = rng.standard_normal((n, m)) + 0.1
        bv = rng.standard_normal((n, m)) + 3.0  # keep divisors away from 0

        ops = [
            ("add", lambda a, b: T.add(a, b)),
            ("sub", lambda a, b: T.sub(a, b)),
            ("mul", lambda a, b: T.mul(a, b)),
            ("div", lambda a, b: T.div(a, b)),
            ("exp", lambda a, b: T.exp(a)),
            ("log", lambda a, b: T.log(T.exp(a))),
            ("neg", lambda a, b: T.neg(a)),
            ("reshape", lambda a, b: T.reshape(a, (m, n))),
            ("mean", lambda a, b: a),
        ]
        for name, op in ops:
            a = t64(av, grad=True)
            loss = T.tmean(op(a, t64(bv)))
            grads = T.backward(loss)

            def f(x, op=op):
                return T.tmean(op(t64(x), t64(bv))).item()

            err = rel_error(grads[a].data, numerical_grad(f, av))
            assert err < 1e-4, f"{name}: rel err {err}"

    @pytest.mark.parametrize("seed", range(20))
    def test_matmul(self, seed):
        rng = np.random.default_rng(200 + seed)
        n, k, m = rng.integers(2, 5, size=3)
        av = rng.standard_normal((n, k))
        bv = rng.standard_normal((k, m))
        a = t64(av, grad=True)
        b = t64(bv, grad=True)
        grads = T.backward(T.tmean(T.matmul(a, b)))
        ga = numerical_grad(lambda x: T.tmean(T.matmul(t64(x), t64(bv))).item(), av)
        gb = numerical_grad(lambda x: T.tmean(T.matmul(t64(av), t64(x))).item(), bv)
        assert rel_error(grads[a].data, ga) < 1e-4
        assert rel_error(grads[b].data, gb) < 1e-4

    @pytest.mark.parametrize("seed", range(20))
    def test_conv2d(self, seed):
        rng = np.random.default_rng(300 + seed)
        stride = int(rng.integers(1, 3))
        padding = ["same", "valid"][seed % 2]
        xv = rng.standard_normal((2, 2, 5, 5))
        wv = rng.standard_normal((3, 2, 3, 3))
        x = t64(xv, grad=True)
        w = t64(wv, grad=True)
        grads = T.backward(T.tmean(T.conv2d(x, w, stride=stride, padding=padding)))
        gx = numerical_grad(
            lambda v: T.tmean(T.conv2d(t64(v), t64(wv), stride=stride, padding=padding)).item(), xv)
        gw = numerical_grad(
            lambda v: T.tmean(T.conv2d(t64(xv), t64(v), stride=stride, padding=padding)).item(), wv)
        assert rel_error(grads[x].data, gx) < 1e-4
        assert rel_error(grads[w].data, gw) < 1e-4

    @pytest.mark.parametrize("seed", range(20))
    def test_pools_voting_slices(self, seed):
        rng = np.random.default_rng(400 + seed)
        xv = rng.standard_normal((2, 2, 4, 4))
        for name, op in [("avgpool", lambda a: T.avgpool2d(a, 2)),
                         ("maxpool", lambda a: T.maxpool2d(a, 2)),
                         ("slice0", lambda a: T.slice0(a, 0, 1)),
                         ("concat0", lambda a: T.concat0([a, a]))]:
            x = t64(xv, grad=True)
            grads = T.backward(T.tmean(op(x)))
            g = numerical_grad(lambda v, op=op: T.tmean(op(t64(v))).item(), xv)
            assert rel_error(grads[x].data, g) < 1e-4, name
        flat = rng.standard_normal((3, 4))
        x = t64(flat, grad=True)
        grads = T.backward(T.tmean(T.voting(x, 2)))
        g = numerical_grad(lambda v: T.tmean(T.voting(t64(v), 2)).item(), flat)
        assert rel_error(grads[x].data, g) < 1e-4

    @pytest.mark.parametrize("seed", range(20))
    def test_log_softmax_pick_relu(self, seed):
        rng = np.random.default_rng(500 + seed)
        xv = rng.standard_normal((3, 5)) * 2
        labels = rng.integers(0, 5, size=3)
        x = t64(xv, grad=True)
        grads = T.backward(T.tmean(T.pick(T.log_softmax(x), labels)))
        g = numerical_grad(
            lambda v: T.tmean(T.pick(T.log_softmax(t64(v)), labels)).item(), xv)
        assert rel_error(grads[x].data, g) < 1e-4

        xv2 = rng.standard_normal((4, 4)) + 0.3  # keep away from the relu kink
        xv2[np.abs(xv2) < 1e-2] = 0.1
        x2 = t64(xv2, grad=True)
        grads2 = T.backward(T.tmean(T.relu(x2)))
        g2 = numerical_grad(lambda v: T.tmean(T.relu(t64(v))).item(), xv2)
        assert rel_error(grads2[x2].data, g2) < 1e-4

    @pytest.mark.parametrize("seed", range(20))
    def test_batchnorm(self, seed):
        rng = np.random.default_rng(600 + seed)
        xv = rng.standard_normal((3, 2, 3, 3))
        gv = rng.uniform(0.5, 1.5, size=2)
        bv = rng.standard_normal(2)
        # random linear probe; a symmetric loss has a vanishing x-gradient
        # through batch norm and drowns in finite-difference noise
        probe = t64(rng.standard_normal((3, 2, 3, 3)))

        x = t64(xv, grad=True)
        gamma = t64(gv, grad=True)
        beta = t64(bv, grad=True)
        out, _, _ = T.batchnorm_train(x, gamma, beta, 1e-5)
        grads = T.backward(T.tmean(T.mul(out, probe)))

        def f_x(v):
            o, _, _ = T.batchnorm_train(t64(v), t64(gv), t64(bv), 1e-5)
            return T.tmean(T.mul(o, probe)).item()

        def f_g(v):
            o, _, _ = T.batchnorm_train(t64(xv), t64(v), t64(bv), 1e-5)
            return T.tmean(T.mul(o, probe)).item()

        def f_b(v):
            o, _, _ = T.batchnorm_train(t64(xv), t64(gv), t64(v), 1e-5)
            return T.tmean(T.mul(o, probe)).item()

        assert rel_error(grads[x].data, numerical_grad(f_x, xv)) < 1e-4
        assert rel_error(grads[gamma].data, numerical_grad(f_g, gv)) < 1e-4
        assert rel_error(grads[beta].data, numerical_grad(f_b, bv)) < 1e-4


class TestConvOracle:
    @pytest.mark.parametrize("seed", range(5))
    def test_conv_matches_bruteforce_f32(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((2, 3, 6, 6)).astype(np.float32)
        w = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)
        for stride, padding in [(1, "valid"), (1, "same"), (2, "same"), (2, "valid")]:
            got = T.conv2d(Tensor(x), Tensor(w), stride=stride, padding=padding).data
            want = conv2d_bruteforce(x, w, stride=stride, padding=padding)
            assert np.max(np.abs(got - want)) < 1e-6 * max(1.0, np.max(np.abs(want)))


class TestCustomGrad:
    def test_passthrough_backward(self):
        spike = T.custom_grad(lambda v: (v >= 0).astype(v.dtype),
                              lambda v: np.ones_like(v), name="step_ones")
        x = t64([-1.0, 1.0], grad=True)
        out = spike(x)
        np.testing.assert_array_equal(out.data, [0.0, 1.0])
        grads = T.backward(T.tsum(out))
        np.testing.assert_array_equal(grads[x].data, [1.0, 1.0])

    def test_zero_backward(self):
        spike = T.custom_grad(lambda v: (v >= 0).astype(v.dtype),
                              lambda v: np.zeros_like(v), name="step_zeros")
        x = t64([-1.0, 1.0], grad=True)
        grads = T.backward(T.tsum(spike(x)))
        np.testing.assert_array_equal(grads[x].data, [0.0, 0.0])

    def test_rectangular_window_hand_value(self):
        # window of width 1 around a threshold of 1: H = 1.4 is inside
        a_sg, v_th = 1.0, 1.0
        spike = T.custom_grad(lambda v: (v >= 0).astype(v.dtype),
                              lambda v: (np.abs(v) <= a_sg / 2).astype(v.dtype) / a_sg)
        h = t64([1.4], grad=True)
        out = spike(h - v_th)
        assert out.data[0] == 1.0
        grads = T.backward(T.tsum(out))
        assert grads[h].data[0] == 1.0

    def test_backward_shape_mismatch_rejected(self):
        bad = T.custom_grad(lambda v: v.copy(), lambda v: np.ones(3), name="bad")
        x = t64([[1.0, 2.0]], grad=True)
        out = bad(x)
        with pytest.raises(ShapeError, match="bad"):
            T.backward(T.tsum(out))

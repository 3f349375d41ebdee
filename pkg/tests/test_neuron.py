"""Neuron dynamics, multi-threshold firing, surrogate gradients, reset."""

import numpy as np
import pytest

from helpers import rel_error

from mtsnn import tensor as T
from mtsnn.neuron import (MTConfig, NeuronParams, NeuronState, fire_mt,
                          fire_st, heaviside, membrane_dynamics, reset, step)
from mtsnn.tensor import Tensor


def t32(arr, grad=False):
    return Tensor(np.asarray(arr, dtype=np.float32), requires_grad=grad)


class TestHeaviside:
    def test_boundary_maps_zero_to_one(self):
        out = heaviside(t32([-0.5, 0.0, 0.5]))
        np.testing.assert_array_equal(out.data, [0.0, 1.0, 1.0])

    def test_all_negative(self):
        out = heaviside(t32([-3.0, -0.1, -1e-8]))
        np.testing.assert_array_equal(out.data, np.zeros(3))

    def test_binary_output_and_fixed_points(self):
        # with the x >= 0 boundary, outputs are binary and both output
        # values are fixed points of a second application (theta(1) = 1,
        # and theta of the whole binary range is all ones since 0 >= 0)
        x = t32(np.random.default_rng(0).standard_normal(64))
        once = heaviside(x)
        assert set(np.unique(once.data)) <= {0.0, 1.0}
        twice = heaviside(once)
        np.testing.assert_array_equal(twice.data, np.ones(64, dtype=np.float32))
        np.testing.assert_array_equal(heaviside(twice).data, twice.data)

    def test_detached(self):
        x = t32([1.0], grad=True)
        assert not heaviside(x).requires_grad


class TestMembraneDynamics:
    def test_plif_hand_value(self):
        # a = 0 gives tau = 2; blend of 0.5/0.5
        p = NeuronParams.create(kind="plif", a_init=0.0)
        h = membrane_dynamics(t32([0.5]), t32([1.0]), p)
        np.testing.assert_allclose(h.data, [0.75], atol=1e-7)

    def test_if_accumulates(self):
        p = NeuronParams.create(kind="if")
        h = membrane_dynamics(t32([0.3]), t32([0.2]), p)
        np.testing.assert_allclose(h.data, [0.5], atol=1e-7)

    def test_zero_in_zero_out(self):
        p = NeuronParams.create(kind="plif")
        h = membrane_dynamics(t32([0.0]), t32([0.0]), p)
        np.testing.assert_array_equal(h.data, [0.0])

    def test_shape_mismatch(self):
        p = NeuronParams.create(kind="if")
        with pytest.raises(T.ShapeError):
            membrane_dynamics(t32([0.0, 1.0]), t32([0.0]), p)

    def test_plif_gradient_reaches_a(self):
        p = NeuronParams.create(kind="plif", a_init=0.3)
        h = membrane_dynamics(t32([0.5, -0.2]), t32([1.0, 0.4]), p)
        grads = T.backward(T.tsum(h))
        assert p.a in grads

    def test_lif_a_is_fixed(self):
        p = NeuronParams.create(kind="lif", a_init=0.3)
        x = t32([1.0], grad=True)
        h = membrane_dynamics(t32([0.5]), x, p)
        grads = T.backward(T.tsum(h))
        assert x in grads
        assert p.a not in grads

    def test_tau_exceeds_one_and_derivative(self):
        # tau = 1 + exp(-a); dtau/da = -exp(-a)
        for a0 in (-2.0, 0.0, 1.5, 4.0):
            p = NeuronParams.create(kind="plif", a_init=a0, dtype=np.float64)
            tau = p.tau()
            assert tau.item() > 1.0
            grads = T.backward(T.tsum(tau))
            eps = 1e-6
            fd = ((1 + np.exp(-(a0 + eps))) - (1 + np.exp(-(a0 - eps)))) / (2 * eps)
            assert rel_error(grads[p.a].data, np.asarray(fd)) < 1e-6


class TestFireST:
    def test_inside_window(self):
        p = NeuronParams.create(kind="if")
        h = t32([1.25], grad=True)
        s = fire_st(h, p)
        grads = T.backward(T.tsum(s))
        assert s.data[0] == 1.0
        assert grads[h].data[0] == 1.0  # |0.25| <= 0.5 at width 1

    def test_outside_window(self):
        p = NeuronParams.create(kind="if")
        h = t32([1.6], grad=True)
        s = fire_st(h, p)
        grads = T.backward(T.tsum(s))
        assert s.data[0] == 1.0
        assert grads[h].data[0] == 0.0

    def test_exact_threshold_fires(self):
        p = NeuronParams.create(kind="if")
        s = fire_st(t32([1.0]), p)
        assert s.data[0] == 1.0


class TestFireMT:
    def test_hand_example(self):
        # thresholds 0.5, 1.0, 1.5 for v_th = 1 and deltas +-0.5
        p = NeuronParams.create(kind="if")
        mt = MTConfig(deltas=(-0.5, 0.5))
        s_base, s_sum = fire_mt(t32([1.25]), p, mt)
        assert s_base.data[0] == 1.0
        assert s_sum.data[0] == 2.0

    def test_empty_deltas_bit_identical_to_st(self):
        p = NeuronParams.create(kind="plif")
        rng = np.random.default_rng(1)
        h = t32(rng.standard_normal(1000) * 2)
        st = fire_st(h, p)
        base, total = fire_mt(h, p, MTConfig(deltas=()))
        np.testing.assert_array_equal(total.data, st.data)
        np.testing.assert_array_equal(base.data, st.data)

    def test_huge_membrane_crosses_everything(self):
        p = NeuronParams.create(kind="if")
        mt = MTConfig(deltas=(-0.3, 0.3))
        _, s_sum = fire_mt(t32([10.0]), p, mt)
        assert s_sum.data[0] == 3.0  # n + 1

    def test_spikes_binary_and_sum_integral(self):
        rng = np.random.default_rng(2)
        p = NeuronParams.create(kind="plif")
        mt = MTConfig(deltas=(-0.4, -0.1, 0.2, 0.55))
        h = t32(rng.standard_normal(20000) * 3)
        base, total = fire_mt(h, p, mt)
        assert set(np.unique(base.data)) <= {0.0, 1.0}
        assert np.array_equal(total.data, np.rint(total.data))
        assert total.data.min() >= 0.0
        assert total.data.max() <= len(mt.deltas) + 1

    def test_monotone_in_membrane(self):
        p = NeuronParams.create(kind="if")
        mt = MTConfig(deltas=(-0.25, 0.4))
        rng = np.random.default_rng(3)
        h1 = rng.standard_normal(500)
        h2 = h1 + rng.random(500)  # elementwise larger
        _, s1 = fire_mt(t32(h1), p, mt)
        _, s2 = fire_mt(t32(h2), p, mt)
        assert np.all(s2.data >= s1.data)

    def test_gradient_is_sum_of_windows(self):
        # analytic equality, not approximate: the backward must produce the
        # exact sum of the per-threshold rectangular windows
        p = NeuronParams.create(kind="plif", a_sg=1.0)
        mt = MTConfig(deltas=(-0.5, 0.5))
        grid = np.linspace(-0.5, 3.0, 701).astype(np.float32)
        h = t32(grid, grad=True)
        _, s_sum = fire_mt(h, p, mt)
        grads = T.backward(T.tsum(s_sum))
        expected = np.zeros_like(grid)
        for thr in (0.5, 1.0, 1.5):
            expected += (np.abs(grid - thr) <= 0.5).astype(np.float32) / 1.0
        np.testing.assert_array_equal(grads[h].data, expected)

    def test_gradient_windows_recentered_per_threshold(self):
        p = NeuronParams.create(kind="plif", a_sg=0.4)
        mt = MTConfig(deltas=(0.8,))
        grid = np.linspace(1.5, 2.1, 121).astype(np.float32)
        h = t32(grid, grad=True)
        _, s_sum = fire_mt(h, p, mt)
        grads = T.backward(T.tsum(s_sum))
        expected = ((np.abs(grid - 1.0) <= 0.2) / 0.4
                    + (np.abs(grid - 1.8) <= 0.2) / 0.4).astype(np.float32)
        np.testing.assert_array_equal(grads[h].data, expected)


class TestReset:
    def test_spike_resets_to_zero(self):
        p = NeuronParams.create(kind="if")
        v = reset(t32([1.25]), t32([1.0]), p)
        assert v.data[0] == 0.0

    def test_no_spike_passthrough(self):
        p = NeuronParams.create(kind="if")
        v = reset(t32([0.8]), t32([0.0]), p)
        assert v.data[0] == 0.8

    def test_vector_case(self):
        p = NeuronParams.create(kind="if")
        h = t32([1.2, 0.4])
        s = fire_st(h, p)
        v = reset(h, s, p)
        np.testing.assert_array_equal(s.data, [1.0, 0.0])
        assert v.data[0] == 0.0
        assert v.data[1] == h.data[1]  # non-spiking neurons keep H exactly

    def test_reset_invariance_random(self):
        p = NeuronParams.create(kind="plif")
        rng = np.random.default_rng(9)
        h = t32(rng.standard_normal(5000) * 2)
        s = fire_st(h, p)
        v = reset(h, s, p)
        fired = s.data == 1.0
        assert np.all(v.data[fired] == 0.0)
        assert np.array_equal(v.data[~fired], h.data[~fired])


class TestStep:
    def test_zero_state_zero_input(self):
        p = NeuronParams.create(kind="plif")
        state = NeuronState.zeros((3,))
        state2, s = step(state, t32([0.0, 0.0, 0.0]), p)
        np.testing.assert_array_equal(state2.v.data, np.zeros(3))
        np.testing.assert_array_equal(s.data, np.zeros(3))

    def test_plif_firing_path(self):
        # a = 0 (tau = 2), V = 1, X = 1 -> H = 1.0, fires, resets
        p = NeuronParams.create(kind="plif", a_init=0.0)
        state = NeuronState(v=t32([1.0]))
        state2, s = step(state, t32([1.0]), p)
        assert s.data[0] == 1.0
        assert state2.v.data[0] == 0.0

    def test_plif_subthreshold_path(self):
        p = NeuronParams.create(kind="plif", a_init=0.0, v_th=1.01)
        state = NeuronState(v=t32([1.0]))
        state2, s = step(state, t32([1.0]), p)
        assert s.data[0] == 0.0
        np.testing.assert_allclose(state2.v.data, [1.0], atol=1e-7)


class TestValidation:
    def test_duplicate_deltas_rejected(self):
        with pytest.raises(ValueError, match="duplicate"):
            MTConfig(deltas=(0.3, 0.3))

    def test_nonfinite_delta_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            MTConfig(deltas=(float("inf"),))

    def test_bad_scope_rejected(self):
        with pytest.raises(ValueError, match="scope"):
            MTConfig(deltas=(0.1,), scope="everything")

    def test_param_invariants(self):
        with pytest.raises(ValueError):
            NeuronParams.create(kind="plif", v_th=0.0)
        with pytest.raises(ValueError):
            NeuronParams.create(kind="plif", a_sg=-1.0)
        with pytest.raises(ValueError):
            NeuronParams.create(kind="quantum")

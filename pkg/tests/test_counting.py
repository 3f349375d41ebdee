"""Operation counting: exact integers, attribution, scope rules."""

import numpy as np
import pytest

from mtsnn import counting
from mtsnn import tensor as T
from mtsnn.mfree import accum_conv
from mtsnn.tensor import Tensor


def f32(shape, seed=0):
    return Tensor(np.random.default_rng(seed).standard_normal(shape).astype(np.float32))


class TestCounts:
    def test_matmul_2x2(self):
        with counting.op_counter() as counts:
            T.matmul(f32((2, 2)), f32((2, 2), 1))
        total = counts.total()
        assert total.multiplications == 8
        assert total.additions == 4

    def test_empty_scope_all_zero(self):
        with counting.op_counter() as counts:
            pass
        total = counts.total()
        assert (total.multiplications, total.additions, total.comparisons) == (0, 0, 0)
        assert counts.as_dict() == {}

    def test_gather_add_reports_zero_multiplications(self):
        rng = np.random.default_rng(3)
        spikes = (rng.random((1, 2, 6, 6)) < 0.4).astype(np.float32)
        kernel = rng.standard_normal((3, 2, 3, 3)).astype(np.float32)
        with counting.op_counter() as counts:
            accum_conv(spikes, kernel, padding="valid")
        total = counts.total()
        assert total.multiplications == 0
        assert total.additions > 0

    def test_nested_scopes_forbidden(self):
        with counting.op_counter():
            with pytest.raises(RuntimeError, match="nested"):
                with counting.op_counter():
                    pass

    def test_sequential_scopes_additive(self):
        a, b = f32((3, 4), 5), f32((4, 2), 6)
        with counting.op_counter() as c1:
            T.matmul(a, b)
        with counting.op_counter() as c2:
            T.matmul(a, b)
            T.matmul(a, b)
        merged = c1 + c2
        assert merged.total().multiplications == 3 * c1.total().multiplications
        assert merged.total().additions == 3 * c1.total().additions
        assert isinstance(merged.total().multiplications, int)

    def test_tag_attribution(self):
        with counting.op_counter() as counts:
            with counting.tag("layer1"):
                T.matmul(f32((2, 2)), f32((2, 2), 1))
            T.matmul(f32((2, 2)), f32((2, 2), 1))
        assert counts.by_tag["layer1"].multiplications == 8
        assert counts.by_tag["matmul"].multiplications == 8

    def test_no_scope_is_noop(self):
        counting.record("anything", mults=5)  # must not raise or leak

    def test_conv_counts_by_definition(self):
        # 1x1x4x4 input, 1x1x2x2 kernel, valid: 9 outputs, 4 mults each
        with counting.op_counter() as counts:
            T.conv2d(f32((1, 1, 4, 4)), f32((1, 1, 2, 2), 1), padding="valid")
        total = counts.total()
        assert total.multiplications == 9 * 4
        assert total.additions == 9 * 3

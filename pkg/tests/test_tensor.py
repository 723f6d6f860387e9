import math

import numpy as np
import pytest

from dualshot_app.errors import GradientError, ShapeError
from dualshot_app.tensor import (
    ConvParams,
    Tensor,
    backward,
    check_parameters,
    concat_channels,
    conv2d,
    crop_to,
    eltwise_mul,
    finite_diff_check,
    index_rows,
    perturb_gradient,
    relu,
    reset,
    smooth_l1,
    softmax_cross_entropy,
    split_channels,
    sum_all,
    to_anchor_rows,
    upsample2x,
)


def _conv(weight, bias=None, dilation=1, stride=1):
    weight = np.asarray(weight, dtype=np.float64)
    bias = np.zeros(weight.shape[0]) if bias is None else np.asarray(bias, dtype=np.float64)
    return ConvParams.same(Tensor(weight, requires_grad=True), Tensor(bias, requires_grad=True),
                           dilation=dilation, stride=stride)


class TestConv2d:

    def test_identity_kernel(self, rng):
        x = Tensor(rng.normal(size=(2, 1, 5, 4)))
        out = conv2d(x, _conv(np.ones((1, 1, 1, 1))))
        np.testing.assert_array_equal(out.data, x.data)

    def test_all_ones_kernel_counts_neighbours(self):
        out = conv2d(Tensor(np.ones((1, 1, 3, 3))), _conv(np.ones((1, 1, 3, 3))))
        assert out.data[0, 0, 1, 1] == 9.0
        assert out.data[0, 0, 0, 0] == 4.0

    def test_dilated_same_padding_keeps_size(self):
        params = _conv(np.ones((1, 1, 3, 3)), dilation=3)
        assert params.padding == 3
        out = conv2d(Tensor(np.ones((1, 1, 8, 8))), params)
        assert out.shape == (1, 1, 8, 8)

    def test_stride_two_uses_ceil(self):
        out = conv2d(Tensor(np.ones((1, 1, 5, 5))), _conv(np.ones((1, 1, 3, 3)), stride=2))
        assert out.shape == (1, 1, 3, 3)

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            conv2d(Tensor(np.ones((1, 2, 4, 4))), _conv(np.ones((1, 3, 1, 1))))

    def test_even_kernel_rejected(self):
        with pytest.raises(ShapeError):
            _conv(np.ones((1, 1, 2, 2)))

    def test_linear_in_input_without_bias(self, rng):
        params = _conv(rng.normal(size=(3, 2, 3, 3)), dilation=2, stride=2)
        x, y = rng.normal(size=(2, 1, 2, 9, 7))
        a, b = 1.7, -0.6
        combined = conv2d(Tensor(a * x + b * y), params).data
        separate = a * conv2d(Tensor(x), params).data + b * conv2d(Tensor(y), params).data
        np.testing.assert_allclose(combined, separate, rtol=0, atol=1e-10)

    def test_output_size_formula(self, rng):
        for _ in range(100):
            h, w = (int(v) for v in rng.integers(1, 14, size=2))
            k = int(rng.choice([1, 3, 5]))
            d, s, p = int(rng.integers(1, 3)), int(rng.integers(1, 4)), int(rng.integers(0, 4))
            params = ConvParams(Tensor(rng.normal(size=(2, 1, k, k))), Tensor(np.zeros(2)),
                                stride=s, dilation=d, padding=p)
            expected = tuple((n + 2 * p - d * (k - 1) - 1) // s + 1 for n in (h, w))
            x = Tensor(rng.normal(size=(1, 1, h, w)))
            if min(expected) < 1:
                with pytest.raises(ShapeError):
                    conv2d(x, params)
                continue
            assert conv2d(x, params).shape == (1, 2, *expected)

    def test_gradients_match_finite_differences(self, rng):
        params = _conv(rng.normal(size=(2, 3, 3, 3)), rng.normal(size=2), dilation=2)
        x = Tensor(rng.normal(size=(1, 3, 6, 5)))
        report = check_parameters(lambda: sum_all(eltwise_mul(conv2d(x, params), conv2d(x, params))),
                                  {"w": params.weight, "b": params.bias}, tol=1e-4, rng=rng)
        assert report.passed, report.describe()


class TestUpsample:

    def test_constant_input(self):
        out = upsample2x(Tensor(np.full((1, 2, 3, 4), 2.5)))
        assert out.shape == (1, 2, 6, 8)
        np.testing.assert_allclose(out.data, 2.5)

    def test_single_cell(self):
        out = upsample2x(Tensor(np.full((1, 1, 1, 1), 5.0)))
        np.testing.assert_array_equal(out.data, np.full((1, 1, 2, 2), 5.0))

    def test_mean_preserved(self):
        out = upsample2x(Tensor(np.array([[[[0.0, 1.0], [2.0, 3.0]]]])))
        assert out.shape == (1, 1, 4, 4)
        assert out.data.mean() == pytest.approx(1.5)

    def test_gradient(self, rng):
        x = Tensor(rng.normal(size=(1, 2, 3, 2)), requires_grad=True)
        weights = rng.normal(size=(1, 2, 6, 4))
        report = finite_diff_check(lambda p: sum_all(eltwise_mul(upsample2x(p), Tensor(weights))), x, 1e-6)
        assert report.passed, report.describe()


class TestElementwise:

    def test_product(self):
        a = Tensor(np.array([1.0, 2.0]))
        b = Tensor(np.array([3.0, 4.0]))
        np.testing.assert_array_equal(eltwise_mul(a, b).data, [3.0, 8.0])
        np.testing.assert_array_equal(eltwise_mul(a, Tensor(np.ones(2))).data, a.data)
        np.testing.assert_array_equal(eltwise_mul(a, Tensor(np.zeros(2))).data, [0.0, 0.0])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            eltwise_mul(Tensor(np.ones(2)), Tensor(np.ones(3)))

    def test_relu(self):
        np.testing.assert_array_equal(relu(Tensor(np.array([-1.0, 0.0, 2.0]))).data, [0.0, 0.0, 2.0])
        np.testing.assert_array_equal(relu(Tensor(-np.ones(3))).data, np.zeros(3))


class TestChannelPlumbing:

    def test_concat_order_and_split_round_trip(self, rng):
        a = Tensor(rng.normal(size=(1, 2, 3, 3)))
        b = Tensor(rng.normal(size=(1, 3, 3, 3)))
        joined = concat_channels([a, b])
        assert joined.shape == (1, 5, 3, 3)
        left, right = split_channels(joined, [2, 3])
        np.testing.assert_array_equal(left.data, a.data)
        np.testing.assert_array_equal(right.data, b.data)

    def test_single_part_unchanged(self, rng):
        a = Tensor(rng.normal(size=(1, 2, 3, 3)))
        assert concat_channels([a]) is a

    def test_crop_to_top_left(self):
        x = Tensor(np.arange(16.0).reshape(1, 1, 4, 4))
        np.testing.assert_array_equal(crop_to(x, 2, 3).data[0, 0], [[0, 1, 2], [4, 5, 6]])
        with pytest.raises(ShapeError):
            crop_to(x, 5, 4)

    def test_anchor_rows_are_row_major(self):
        x = Tensor(np.arange(12.0).reshape(1, 2, 2, 3))
        rows = to_anchor_rows(x)
        assert rows.shape == (1, 6, 2)
        np.testing.assert_array_equal(rows.data[0, 4], [4.0, 10.0])

    def test_index_rows_accumulates_repeats(self):
        x = Tensor(np.arange(6.0).reshape(3, 2), requires_grad=True)
        root = sum_all(index_rows(x, [0, 0, 2]))
        backward(root)
        np.testing.assert_array_equal(x.grad, [[2, 2], [0, 0], [1, 1]])


class TestLosses:

    def test_uniform_logits(self):
        out = softmax_cross_entropy(Tensor(np.array([[0.7, 0.7]])), [1])
        assert out.data[0] == pytest.approx(math.log(2.0), abs=1e-6)

    def test_saturated_prediction(self):
        out = softmax_cross_entropy(Tensor(np.array([[20.0, -20.0]])), [0])
        assert out.data[0] < 1e-8

    def test_hand_value(self):
        out = softmax_cross_entropy(Tensor(np.array([[0.0, 1.0]])), [1])
        assert out.data[0] == pytest.approx(0.313262, abs=1e-6)

    def test_extreme_logits_stay_finite(self):
        out = softmax_cross_entropy(Tensor(np.array([[1000.0, -1000.0]])), [1])
        assert np.isfinite(out.data).all()
        assert out.data[0] == pytest.approx(2000.0)

    def test_labels_must_be_binary(self):
        with pytest.raises(ShapeError):
            softmax_cross_entropy(Tensor(np.zeros((1, 2))), [2])

    def test_smooth_l1_branches(self):
        assert smooth_l1(Tensor(np.zeros(4)), np.zeros(4)).item() == 0.0
        assert smooth_l1(Tensor(np.array([0.5, 0, 0, 0])), np.zeros(4)).item() == pytest.approx(0.125)
        assert smooth_l1(Tensor(np.array([2.0, 0, 0, 0])), np.zeros(4)).item() == pytest.approx(1.5)


class TestBackward:

    def test_sum_gives_ones(self, rng):
        a = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
        backward(sum_all(a))
        np.testing.assert_array_equal(a.grad, np.ones((2, 3)))

    def test_product_rule(self, rng):
        a = Tensor(rng.normal(size=5), requires_grad=True)
        b = Tensor(rng.normal(size=5))
        backward(sum_all(eltwise_mul(a, b)))
        np.testing.assert_array_equal(a.grad, b.data)

    def test_shared_subgraph_accumulates(self):
        a = Tensor(np.array([3.0]), requires_grad=True)
        backward(sum_all(eltwise_mul(a, a)))
        np.testing.assert_allclose(a.grad, [6.0])

    def test_second_backward_needs_reset(self):
        a = Tensor(np.ones(2), requires_grad=True)
        root = sum_all(a)
        backward(root)
        with pytest.raises(GradientError):
            backward(root)
        reset(root)
        backward(root)
        np.testing.assert_array_equal(a.grad, np.ones(2))

    def test_non_scalar_root(self):
        with pytest.raises(GradientError):
            backward(Tensor(np.ones(2), requires_grad=True))


class TestFiniteDifferences:

    def test_polynomial_passes_tight(self, rng):
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        report = finite_diff_check(lambda p: sum_all(eltwise_mul(p, p)), x, tol=1e-6)
        assert report.passed, report.describe()

    def test_corrupted_backward_fails(self, rng):
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        report = finite_diff_check(lambda p: sum_all(perturb_gradient(eltwise_mul(p, p), 1.5)), x, tol=1e-4)
        assert not report.passed
        assert report.max_rel_error > 0.1

    def test_relu_kink_is_not_a_failure(self):
        x = Tensor(np.array([0.0, 1.0, -1.0]), requires_grad=True)
        report = finite_diff_check(lambda p: sum_all(relu(p)), x, tol=1e-6)
        assert report.passed, report.describe()
        assert report.nonsmooth == 1

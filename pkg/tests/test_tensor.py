"""Forward semantics and error handling of the tensor ops."""

import numpy as np
import pytest

from lumenseg import tensor as T
from lumenseg.errors import ConfigError, ShapeError
from lumenseg.tensor import Tensor


def t64(arr):
    return Tensor(np.asarray(arr, dtype=np.float64))


class TestTensorBasics:
    def test_shape_data_invariant(self):
        x = Tensor(np.zeros((3, 4, 2)))
        assert int(np.prod(x.shape)) == x.size == x.data.size

    def test_grad_shape_matches(self):
        x = Tensor(np.ones((2, 3)), requires_grad=True)
        T.tsum(x).backward()
        assert x.grad.shape == x.shape

    def test_backward_needs_scalar(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        with pytest.raises(ShapeError):
            T.relu(x).backward()

    def test_no_grad_blocks_graph(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with T.no_grad():
            y = T.relu(x)
        assert not y.requires_grad
        assert y._backward is None

    def test_grad_accumulates_over_reuse(self):
        x = Tensor(np.array([2.0]), requires_grad=True)
        y = T.add(T.mul(x, x), x)  # x^2 + x -> dy/dx = 2x + 1 = 5
        y.backward()
        assert np.allclose(x.grad, [5.0])


class TestElementwise:
    def test_relu_values(self):
        y = T.relu(t64([-1.0, 2.0, 0.0]))
        assert np.array_equal(y.data, [0.0, 2.0, 0.0])

    def test_sigmoid_values(self):
        y = T.sigmoid(t64([0.0]))
        assert y.data[0] == 0.5
        big = T.sigmoid(t64([40.0, -40.0]))
        assert np.all(np.isfinite(big.data))

    def test_add_broadcast_bias(self):
        x = t64(np.ones((2, 2, 3)))
        b = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
        y = T.add(x, b)
        assert y.shape == (2, 2, 3)
        T.tsum(y).backward()
        assert np.array_equal(b.grad, [4.0, 4.0, 4.0])

    def test_finite_outputs_on_finite_inputs(self):
        rng = np.random.default_rng(0)
        x = t64(rng.normal(size=(4, 4, 2)))
        for out in (
            T.relu(x),
            T.sigmoid(x),
            T.maxpool2(x),
            T.upsample2(x),
            T.zero_pad_spatial(x, 2),
            T.batchnorm(x, t64(np.ones(2)), t64(np.zeros(2))),
        ):
            assert np.all(np.isfinite(out.data))


class TestBatchnorm:
    def test_constant_input_gives_beta(self):
        x = t64(np.full((3, 3, 2), 7.0))
        beta = t64([0.5, -0.25])
        y = T.batchnorm(x, t64(np.ones(2)), beta)
        assert np.allclose(y.data[..., 0], 0.5)
        assert np.allclose(y.data[..., 1], -0.25)

    def test_normalizes_channels(self):
        rng = np.random.default_rng(1)
        x = t64(rng.normal(3.0, 2.0, size=(8, 8, 3)))
        y = T.batchnorm(x, t64(np.ones(3)), t64(np.zeros(3)))
        assert np.abs(y.data.mean(axis=(0, 1))).max() < 1e-10
        assert np.abs(y.data.var(axis=(0, 1)) - 1.0).max() < 1e-4

    def test_eps_validation(self):
        x = t64(np.ones((2, 2, 1)))
        with pytest.raises(ConfigError):
            T.batchnorm(x, t64([1.0]), t64([0.0]), eps=0.0)

    def test_inference_uses_running_stats(self):
        x = t64(np.array([[[2.0], [4.0]]]))
        y = T.batchnorm_inference(x, t64([1.0]), t64([0.0]),
                                  np.array([3.0]), np.array([4.0]), eps=1e-12)
        assert np.allclose(y.data.ravel(), [-0.5, 0.5], atol=1e-6)


class TestSpatialOps:
    def test_zero_pad_borders_and_interior(self):
        rng = np.random.default_rng(2)
        x = t64(rng.normal(size=(1, 4, 5, 3)))
        y = T.zero_pad_spatial(x, 1)
        assert y.shape == (1, 6, 7, 3)
        assert np.array_equal(y.data[:, 1:-1, 1:-1, :], x.data)
        assert np.all(y.data[:, 0] == 0) and np.all(y.data[:, -1] == 0)
        assert np.all(y.data[:, :, 0] == 0) and np.all(y.data[:, :, -1] == 0)

    def test_zero_pad_identity_and_sum(self):
        rng = np.random.default_rng(3)
        x = t64(rng.normal(size=(1, 5, 5, 2)))
        assert T.zero_pad_spatial(x, 0) is x
        y = T.zero_pad_spatial(x, 3)
        assert np.isclose(y.data.sum(), x.data.sum())

    def test_zero_pad_gradient_interior_only(self):
        x = Tensor(np.ones((1, 2, 2, 1)), requires_grad=True)
        y = T.zero_pad_spatial(x, 1)
        g = np.full(y.shape, 2.0)
        T.tsum(T.mul(y, Tensor(g))).backward()
        assert np.array_equal(x.grad, np.full((1, 2, 2, 1), 2.0))

    def test_maxpool_values_and_shape(self):
        x = t64(np.arange(16, dtype=np.float64).reshape(4, 4, 1))
        y = T.maxpool2(x)
        assert y.shape == (2, 2, 1)
        assert np.array_equal(y.data[..., 0], [[5, 7], [13, 15]])

    def test_maxpool_tie_routes_first_scan_index(self):
        x = Tensor(np.full((2, 2, 1), 3.0), requires_grad=True)
        y = T.maxpool2(x)
        y.backward(np.ones_like(y.data))
        # all four tie; the gradient goes to (0,0) only
        want = np.zeros((2, 2, 1))
        want[0, 0, 0] = 1.0
        assert np.array_equal(x.grad, want)

    def test_maxpool_needs_even_extents(self):
        with pytest.raises(ShapeError):
            T.maxpool2(t64(np.zeros((3, 4, 1))))

    def test_upsample_nearest(self):
        x = t64(np.array([[[1.0], [2.0]], [[3.0], [4.0]]]))
        y = T.upsample2(x)
        assert y.shape == (4, 4, 1)
        assert np.array_equal(y.data[..., 0][:2, :2], [[1, 1], [1, 1]])
        assert np.array_equal(y.data[..., 0][2:, 2:], [[4, 4], [4, 4]])

    def test_maxpool_upsample_roundtrip_shape(self):
        x = t64(np.random.default_rng(0).normal(size=(8, 8, 4)))
        assert T.upsample2(T.maxpool2(x)).shape == x.shape

    def test_concat_channels(self):
        a = t64(np.ones((2, 2, 1)))
        b = t64(np.zeros((2, 2, 2)))
        y = T.concat_channels(a, b)
        assert y.shape == (2, 2, 3)
        with pytest.raises(ShapeError):
            T.concat_channels(a, t64(np.zeros((3, 2, 1))))


class TestConvOpErrors:
    def test_channel_mismatch_names_axes(self):
        x = t64(np.zeros((5, 5, 2)))
        w = t64(np.zeros((3, 3, 3, 4)))
        with pytest.raises(ShapeError, match="channel"):
            T.conv2d(x, w)

    def test_kernel_too_large(self):
        x = t64(np.zeros((2, 2, 1)))
        w = t64(np.zeros((3, 3, 1, 1)))
        with pytest.raises(ShapeError, match="larger"):
            T.conv2d(x, w)

    def test_bad_stride(self):
        x = t64(np.zeros((5, 5, 1)))
        w = t64(np.zeros((3, 3, 1, 1)))
        with pytest.raises(ConfigError):
            T.conv2d(x, w, stride=0)

    def test_conv3d_temporal_mismatch(self):
        x = t64(np.zeros((2, 5, 5, 1)))
        w = t64(np.zeros((3, 3, 3, 1, 2)))
        with pytest.raises(ShapeError, match="temporal"):
            T.conv3d(x, w)

    def test_conv2d_batched_and_single_agree(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(6, 6, 2))
        w = t64(rng.normal(size=(3, 3, 2, 3)))
        single = T.conv2d(t64(x), w, 1, 1).data
        batched = T.conv2d(t64(x[None]), w, 1, 1).data[0]
        assert np.allclose(single, batched)

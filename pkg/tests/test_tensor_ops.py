import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from gradcheck import TOLERANCE, numerical_gradient, relative_error
from ocular.exceptions import ShapeError
from ocular.services import tensor_ops as ops
from ocular.services.tensor_ops import BatchNormParams, ConvParams


def naive_conv(x, weights, bias):
    n, c, h, w = x.shape
    out_c, _, k, _ = weights.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    out = np.zeros((n, out_c, h, w))
    for b in range(n):
        for o in range(out_c):
            for i in range(h):
                for j in range(w):
                    out[b, o, i, j] = np.sum(xp[b, :, i:i + k, j:j + k] * weights[o]) + bias[o]
    return out


def random_conv(rng, in_c=2, out_c=3, k=3):
    return ConvParams(rng.standard_normal((out_c, in_c, k, k)), rng.standard_normal(out_c))


class TestConv2d:
    def test_one_by_one_scales(self):
        x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]], dtype=np.float32)
        params = ConvParams(np.full((1, 1, 1, 1), 2.0, dtype=np.float32), np.zeros(1, dtype=np.float32))
        assert_array_equal(ops.conv2d_forward(x, params)[0, 0], [[2, 4], [6, 8]])

    def test_all_ones_same_padding(self):
        x = np.ones((1, 1, 3, 3), dtype=np.float32)
        params = ConvParams(np.ones((1, 1, 3, 3), dtype=np.float32), np.zeros(1, dtype=np.float32))
        assert_array_equal(ops.conv2d_forward(x, params)[0, 0], [[4, 6, 4], [6, 9, 6], [4, 6, 4]])

    @pytest.mark.parametrize("k", [1, 3])
    def test_matches_nested_loops(self, rng, k):
        x = rng.standard_normal((2, 3, 6, 5))
        params = random_conv(rng, in_c=3, out_c=4, k=k)
        assert_allclose(ops.conv2d_forward(x, params), naive_conv(x, params.weights, params.bias), atol=1e-12)

    @pytest.mark.parametrize("size", [1, 2])
    def test_map_smaller_than_kernel(self, rng, size):
        """Same padding keeps 1x1 and 2x2 maps valid under a 3x3 kernel"""
        x = rng.standard_normal((2, 3, size, size))
        params = random_conv(rng, in_c=3, out_c=4, k=3)
        assert_allclose(ops.conv2d_forward(x, params), naive_conv(x, params.weights, params.bias), atol=1e-12)

        g = rng.standard_normal((2, 4, size, size))

        def loss():
            return float(np.sum(ops.conv2d_forward(x, params) * g))

        gx, gw, gb = ops.conv2d_backward(x, params, g)
        assert relative_error(gx, numerical_gradient(loss, x)) < TOLERANCE
        assert relative_error(gw, numerical_gradient(loss, params.weights)) < TOLERANCE

    def test_empty_map_rejected(self, rng):
        with pytest.raises(ShapeError, match="empty"):
            ops.conv2d_forward(np.zeros((1, 2, 0, 4)), random_conv(rng))

    def test_layer_zero_shape(self):
        x = np.zeros((1, 3, 416, 416), dtype=np.float32)
        params = ConvParams(np.zeros((32, 3, 3, 3), dtype=np.float32), np.zeros(32, dtype=np.float32))
        out = ops.conv2d_forward(x, params)
        assert out.shape == (1, 32, 416, 416)
        assert out.dtype == np.float32

    def test_channel_mismatch_names_both_shapes(self, rng):
        params = random_conv(rng, in_c=2)
        with pytest.raises(ShapeError) as exc:
            ops.conv2d_forward(np.zeros((1, 3, 4, 4)), params)
        assert "(1, 3, 4, 4)" in str(exc.value)
        assert "(3, 2, 3, 3)" in str(exc.value)

    def test_kernel_must_be_one_or_three(self):
        with pytest.raises(ShapeError):
            ConvParams(np.zeros((1, 1, 5, 5)), np.zeros(1))

    def test_zero_grad_gives_zero_gradients(self, rng):
        x = rng.standard_normal((1, 2, 4, 4))
        params = random_conv(rng)
        gx, gw, gb = ops.conv2d_backward(x, params, np.zeros((1, 3, 4, 4)))
        assert not gx.any() and not gw.any() and not gb.any()

    def test_scalar_chain_rule(self):
        x = np.array([[[[3.0]]]])
        params = ConvParams(np.array([[[[2.0]]]]), np.zeros(1))
        gx, gw, gb = ops.conv2d_backward(x, params, np.array([[[[5.0]]]]))
        assert gw[0, 0, 0, 0] == 15.0
        assert gx[0, 0, 0, 0] == 10.0
        assert gb[0] == 5.0

    def test_grad_out_shape_checked(self, rng):
        with pytest.raises(ShapeError):
            ops.conv2d_backward(np.zeros((1, 2, 4, 4)), random_conv(rng), np.zeros((1, 3, 2, 2)))

    @pytest.mark.parametrize("seed", range(20))
    def test_gradients_match_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        k = 3 if seed % 4 else 1
        x = rng.standard_normal((1, 4, 8, 8)) if seed < 2 else rng.standard_normal((2, 2, 5, 5))
        params = random_conv(rng, in_c=x.shape[1], out_c=3, k=k)
        g = rng.standard_normal((x.shape[0], 3) + x.shape[2:])

        def loss():
            return float(np.sum(ops.conv2d_forward(x, params) * g))

        gx, gw, gb = ops.conv2d_backward(x, params, g)
        assert relative_error(gx, numerical_gradient(loss, x)) < TOLERANCE
        assert relative_error(gw, numerical_gradient(loss, params.weights)) < TOLERANCE
        assert relative_error(gb, numerical_gradient(loss, params.bias)) < TOLERANCE


class TestBatchNorm:
    def test_identity_parameters_in_inference(self, rng):
        x = rng.standard_normal((2, 3, 4, 4)).astype(np.float32)
        out = ops.batchnorm_apply(x, BatchNormParams.identity(3), training=False)
        assert_allclose(out, x, rtol=1e-4)

    def test_constant_batch_gives_beta(self):
        params = BatchNormParams.identity(2)
        params.beta[:] = 7.0
        out = ops.batchnorm_apply(np.full((3, 2, 4, 4), 5.0, dtype=np.float32), params, training=True)
        assert_allclose(out, 7.0)

    def test_output_moments_match_gamma_beta(self, rng):
        params = BatchNormParams(
            gamma=np.array([0.5, 2.0]), beta=np.array([1.0, -3.0]),
            running_mean=np.zeros(2), running_var=np.ones(2),
        )
        x = rng.normal(4.0, 3.0, size=(8, 2, 6, 6))
        out = ops.batchnorm_apply(x, params, training=True)
        assert_allclose(out.mean(axis=(0, 2, 3)), params.beta, atol=1e-4)
        assert_allclose(out.var(axis=(0, 2, 3)), params.gamma ** 2, atol=1e-4)

    def test_training_updates_running_statistics(self, rng):
        params = BatchNormParams.identity(1, dtype=np.float64)
        x = rng.normal(2.0, 1.0, size=(4, 1, 5, 5))
        ops.batchnorm_forward(x, params, training=True)
        assert params.running_mean[0] == pytest.approx(0.01 * x.mean())
        assert params.running_var[0] == pytest.approx(0.99 + 0.01 * x.var())

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            ops.batchnorm_apply(np.zeros((1, 2, 2, 2)), BatchNormParams.identity(3), training=False)

    def test_zero_channels(self):
        with pytest.raises(ShapeError):
            ops.batchnorm_apply(np.zeros((1, 0, 2, 2)), BatchNormParams.identity(0), training=False)

    @pytest.mark.parametrize("seed", range(20))
    @pytest.mark.parametrize("training", [True, False])
    def test_gradients_match_finite_differences(self, seed, training):
        rng = np.random.default_rng(100 + seed)
        x = rng.standard_normal((3, 2, 3, 3))
        params = BatchNormParams(
            gamma=rng.uniform(0.5, 1.5, 2), beta=rng.standard_normal(2),
            running_mean=rng.standard_normal(2), running_var=rng.uniform(0.5, 2.0, 2),
        )
        g = rng.standard_normal(x.shape)

        def loss():
            out, _ = ops.batchnorm_forward(x, params, training, update_running=False)
            return float(np.sum(out * g))

        _, cache = ops.batchnorm_forward(x, params, training, update_running=False)
        gx, ggamma, gbeta = ops.batchnorm_backward(g, cache)
        assert relative_error(gx, numerical_gradient(loss, x)) < TOLERANCE
        assert relative_error(ggamma, numerical_gradient(loss, params.gamma)) < TOLERANCE
        assert relative_error(gbeta, numerical_gradient(loss, params.beta)) < TOLERANCE


class TestLeakyRelu:
    def test_values(self):
        out = ops.leaky_relu(np.array([5.0, -10.0]), 0.1)
        assert_allclose(out, [5.0, -1.0])

    def test_backward(self):
        assert ops.leaky_relu_backward(np.array([-3.0]), np.array([2.0]), 0.1)[0] == pytest.approx(0.2)

    def test_monotone_and_identity_on_nonnegative(self, rng):
        x = np.sort(rng.standard_normal(100))
        out = ops.leaky_relu(x)
        assert np.all(np.diff(out) >= 0)
        assert_array_equal(out[x >= 0], x[x >= 0])

    @pytest.mark.parametrize("seed", range(20))
    def test_gradients_match_finite_differences(self, seed):
        rng = np.random.default_rng(200 + seed)
        x = rng.standard_normal((2, 2, 3, 3))
        x[np.abs(x) < 1e-2] = 0.5  # keep away from the kink
        g = rng.standard_normal(x.shape)

        def loss():
            return float(np.sum(ops.leaky_relu(x, 0.1) * g))

        analytic = ops.leaky_relu_backward(x, g, 0.1)
        assert relative_error(analytic, numerical_gradient(loss, x)) < TOLERANCE


class TestMaxPool:
    def test_window_max(self):
        x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
        assert_array_equal(ops.maxpool2(x), [[[[4.0]]]])

    def test_backward_routes_to_argmax(self):
        x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
        grad = ops.maxpool2_backward(x, np.array([[[[5.0]]]]))
        assert_array_equal(grad[0, 0], [[0, 0], [0, 5]])

    def test_ties_route_to_first_index(self):
        x = np.ones((1, 1, 2, 2))
        grad = ops.maxpool2_backward(x, np.array([[[[1.0]]]]))
        assert_array_equal(grad[0, 0], [[1, 0], [0, 0]])

    def test_halves_table_sizes(self):
        assert ops.maxpool2(np.zeros((1, 32, 416, 416), dtype=np.float32)).shape == (1, 32, 208, 208)

    def test_odd_size_rejected(self):
        with pytest.raises(ShapeError):
            ops.maxpool2(np.zeros((1, 1, 3, 4)))

    def test_outputs_come_from_windows(self, rng):
        x = rng.standard_normal((2, 3, 6, 6))
        out = ops.maxpool2(x)
        for i in range(3):
            for j in range(3):
                window = x[:, :, 2 * i:2 * i + 2, 2 * j:2 * j + 2].reshape(2, 3, 4)
                assert np.all(np.any(window == out[:, :, i, j][..., None], axis=-1))

    @pytest.mark.parametrize("seed", range(20))
    def test_gradients_match_finite_differences(self, seed):
        rng = np.random.default_rng(300 + seed)
        # distinct, well separated values so that perturbations never change the argmax
        x = rng.permutation(2 * 2 * 4 * 4).reshape(2, 2, 4, 4).astype(np.float64) * 0.1
        g = rng.standard_normal((2, 2, 2, 2))

        def loss():
            return float(np.sum(ops.maxpool2(x) * g))

        analytic = ops.maxpool2_backward(x, g)
        assert relative_error(analytic, numerical_gradient(loss, x)) < TOLERANCE


def test_kernels_are_deterministic(rng):
    x = rng.standard_normal((2, 2, 4, 4)).astype(np.float32)
    params = random_conv(rng).astype(np.float32)
    assert_array_equal(ops.conv2d_forward(x, params), ops.conv2d_forward(x.copy(), params))

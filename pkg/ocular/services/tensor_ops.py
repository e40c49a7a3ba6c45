"""
Layer kernels over rank-4 tensors (batch, channels, height, width)

Convolution is cross-correlation: the filter is not flipped. All kernels
are pure functions of their inputs except batch-norm in training mode,
which updates the running statistics stored in its parameters.
Production math runs in float32; float64 inputs go through the same code
for gradient checking.
"""
from dataclasses import dataclass
from typing import Tuple
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..exceptions import ShapeError

Tensor = np.ndarray

LEAKY_SLOPE = 0.1
BN_EPSILON = 1e-5
BN_MOMENTUM = 0.99


def ensure_tensor(x: Tensor, name: str = "input") -> Tensor:
    if not isinstance(x, np.ndarray) or x.ndim != 4:
        shape = getattr(x, "shape", None)
        raise ShapeError(f"{name} must be a rank-4 tensor (N, C, H, W), got shape {shape}")
    return x


@dataclass
class ConvParams:
    weights: np.ndarray  # (out_channels, in_channels, kernel, kernel)
    bias: np.ndarray     # (out_channels,)

    def __post_init__(self):
        if self.weights.ndim != 4 or self.weights.shape[2] != self.weights.shape[3]:
            raise ShapeError(f"conv weights must be (out, in, k, k), got {self.weights.shape}")
        if self.kernel not in (1, 3):
            raise ShapeError(f"kernel must be 1 or 3, got {self.kernel}")
        if self.bias.shape != (self.out_channels,):
            raise ShapeError(
                f"bias shape {self.bias.shape} does not match {self.out_channels} filters"
            )

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def kernel(self) -> int:
        return self.weights.shape[2]

    @property
    def padding(self) -> int:
        return self.kernel // 2

    def astype(self, dtype) -> "ConvParams":
        return ConvParams(self.weights.astype(dtype), self.bias.astype(dtype))


@dataclass
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = BN_EPSILON
    momentum: float = BN_MOMENTUM

    @classmethod
    def identity(cls, channels: int, dtype=np.float32) -> "BatchNormParams":
        return cls(
            gamma=np.ones(channels, dtype=dtype),
            beta=np.zeros(channels, dtype=dtype),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
        )

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]

    def astype(self, dtype) -> "BatchNormParams":
        return BatchNormParams(
            self.gamma.astype(dtype),
            self.beta.astype(dtype),
            self.running_mean.astype(dtype),
            self.running_var.astype(dtype),
            self.epsilon,
            self.momentum,
        )


@dataclass
class BatchNormCache:
    x_hat: np.ndarray
    inv_std: np.ndarray
    gamma: np.ndarray
    training: bool


def _pad(x: Tensor, padding: int) -> Tensor:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)), mode="constant")


def _check_conv_input(x: Tensor, params: ConvParams) -> None:
    ensure_tensor(x)
    if x.shape[1] != params.in_channels:
        raise ShapeError(
            f"input shape {x.shape} does not match weights shape {params.weights.shape}: "
            f"expected {params.in_channels} input channels"
        )
    # same padding keeps any non-empty map valid, down to 1x1 under a 3x3 kernel
    if x.shape[2] == 0 or x.shape[3] == 0:
        raise ShapeError(f"input shape {x.shape} has an empty spatial extent")


def conv2d_forward(x: Tensor, params: ConvParams) -> Tensor:
    """Stride-1 same-padded cross-correlation plus bias"""
    _check_conv_input(x, params)
    k = params.kernel
    windows = sliding_window_view(_pad(x, params.padding), (k, k), axis=(2, 3))
    # (N, H, W, out) after contracting channels and kernel offsets
    out = np.tensordot(windows, params.weights, axes=([1, 4, 5], [1, 2, 3]))
    out = out.transpose(0, 3, 1, 2) + params.bias[None, :, None, None]
    return np.ascontiguousarray(out, dtype=np.result_type(x, params.weights))


def conv2d_backward(
    x: Tensor, params: ConvParams, grad_out: Tensor
) -> Tuple[Tensor, np.ndarray, np.ndarray]:
    """Returns (grad_input, grad_weights, grad_bias)"""
    _check_conv_input(x, params)
    n, _, h, w = x.shape
    expected = (n, params.out_channels, h, w)
    if grad_out.shape != expected:
        raise ShapeError(f"grad_out shape {grad_out.shape} does not match output shape {expected}")

    k = params.kernel
    p = params.padding
    x_padded = _pad(x, p)
    windows = sliding_window_view(x_padded, (k, k), axis=(2, 3))

    grad_weights = np.tensordot(grad_out, windows, axes=([0, 2, 3], [0, 2, 3]))
    grad_bias = grad_out.sum(axis=(0, 2, 3))

    grad_padded = np.zeros(x_padded.shape, dtype=np.result_type(grad_out, params.weights))
    for i in range(k):
        for j in range(k):
            # (in, N, H, W)
            contrib = np.tensordot(params.weights[:, :, i, j], grad_out, axes=([0], [1]))
            grad_padded[:, :, i:i + h, j:j + w] += contrib.transpose(1, 0, 2, 3)
    grad_input = grad_padded[:, :, p:p + h, p:p + w] if p else grad_padded

    return (
        np.ascontiguousarray(grad_input),
        grad_weights.astype(params.weights.dtype, copy=False),
        grad_bias.astype(params.bias.dtype, copy=False),
    )


def batchnorm_forward(
    x: Tensor, params: BatchNormParams, training: bool, update_running: bool = True
) -> Tuple[Tensor, BatchNormCache]:
    ensure_tensor(x)
    channels = x.shape[1]
    if channels == 0:
        raise ShapeError("batch norm needs at least one channel")
    if channels != params.channels:
        raise ShapeError(
            f"input shape {x.shape} has {channels} channels, parameters have {params.channels}"
        )

    if training:
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        if update_running:
            m = params.momentum
            params.running_mean[...] = m * params.running_mean + (1.0 - m) * mean
            params.running_var[...] = m * params.running_var + (1.0 - m) * var
    else:
        mean = params.running_mean
        var = params.running_var

    inv_std = (1.0 / np.sqrt(var + params.epsilon)).astype(x.dtype, copy=False)
    x_hat = (x - mean[None, :, None, None].astype(x.dtype)) * inv_std[None, :, None, None]
    out = params.gamma[None, :, None, None] * x_hat + params.beta[None, :, None, None]
    cache = BatchNormCache(x_hat=x_hat, inv_std=inv_std, gamma=params.gamma, training=training)
    return out.astype(x.dtype, copy=False), cache


def batchnorm_apply(x: Tensor, params: BatchNormParams, training: bool) -> Tensor:
    out, _ = batchnorm_forward(x, params, training)
    return out


def batchnorm_backward(
    grad_out: Tensor, cache: BatchNormCache
) -> Tuple[Tensor, np.ndarray, np.ndarray]:
    """Returns (grad_input, grad_gamma, grad_beta)"""
    if grad_out.shape != cache.x_hat.shape:
        raise ShapeError(f"grad_out shape {grad_out.shape} does not match input shape {cache.x_hat.shape}")

    grad_gamma = (grad_out * cache.x_hat).sum(axis=(0, 2, 3))
    grad_beta = grad_out.sum(axis=(0, 2, 3))
    grad_x_hat = grad_out * cache.gamma[None, :, None, None]
    inv_std = cache.inv_std[None, :, None, None]

    if not cache.training:
        return grad_x_hat * inv_std, grad_gamma, grad_beta

    m = grad_out.shape[0] * grad_out.shape[2] * grad_out.shape[3]
    sum_g = grad_x_hat.sum(axis=(0, 2, 3), keepdims=True)
    sum_gx = (grad_x_hat * cache.x_hat).sum(axis=(0, 2, 3), keepdims=True)
    grad_input = inv_std / m * (m * grad_x_hat - sum_g - cache.x_hat * sum_gx)
    return grad_input.astype(grad_out.dtype, copy=False), grad_gamma, grad_beta


def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    return np.where(x > 0, x, x * slope).astype(x.dtype, copy=False)


def leaky_relu_backward(x: Tensor, grad_out: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    return np.where(x > 0, grad_out, grad_out * slope).astype(grad_out.dtype, copy=False)


def _pool_windows(x: Tensor) -> np.ndarray:
    """(N, C, H/2, W/2, 4) with each window in row-major order"""
    n, c, h, w = x.shape
    return x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)


def _check_pool_input(x: Tensor) -> None:
    ensure_tensor(x)
    if x.shape[2] % 2 or x.shape[3] % 2:
        raise ShapeError(f"max-pool needs even spatial dimensions, got {x.shape}")


def maxpool2(x: Tensor) -> Tensor:
    """2x2 window, stride 2"""
    _check_pool_input(x)
    return np.ascontiguousarray(_pool_windows(x).max(axis=-1))


def maxpool2_backward(x: Tensor, grad_out: Tensor) -> Tensor:
    """Routes each upstream gradient to the first argmax of its window"""
    _check_pool_input(x)
    n, c, h, w = x.shape
    if grad_out.shape != (n, c, h // 2, w // 2):
        raise ShapeError(f"grad_out shape {grad_out.shape} does not match pooled shape {(n, c, h // 2, w // 2)}")

    argmax = _pool_windows(x).argmax(axis=-1)
    routed = np.zeros((n, c, h // 2, w // 2, 4), dtype=grad_out.dtype)
    np.put_along_axis(routed, argmax[..., None], grad_out[..., None], axis=-1)
    grad_input = routed.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
    return np.ascontiguousarray(grad_input)


def he_normal(rng: np.random.Generator, shape: Tuple[int, ...], dtype=np.float32) -> np.ndarray:
    """Fan-in scaled normal init for conv filters"""
    fan_in = int(np.prod(shape[1:]))
    return (rng.standard_normal(size=shape) * np.sqrt(2.0 / fan_in)).astype(dtype)

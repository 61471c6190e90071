"""Forward and backward passes for the layer vocabulary of the network.

All routines take and return ``numpy`` arrays in (batch, channel, height,
width) layout. Each ``*_forward`` returns the output together with a cache
that the matching ``*_backward`` consumes; the short-named wrappers
(``conv2d_dilated``, ``batch_norm``, ...) return only the output.

Convolution follows the true-convolution index convention
``out(p) = sum_{s + l*t = p} F(s) k(t)`` with taps ``t`` in ``[-r, r]^2``,
so weight ``w[o, c, i, j]`` multiplies the input at offset
``-l * (i - r, j - r)`` from the output position.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError, ShapeError
from .tensor import as_tensor4


@dataclass(frozen=True)
class ConvSpec:
    radius: int
    dilation: int = 1
    stride: int = 1
    padding: int | None = None
    in_channels: int = 1
    out_channels: int = 1

    def __post_init__(self):
        if self.radius < 0:
            raise ConfigError(f"radius must be >= 0, got {self.radius}")
        if self.dilation < 1:
            raise ConfigError(f"dilation must be >= 1, got {self.dilation}")
        if self.stride < 1:
            raise ConfigError(f"stride must be >= 1, got {self.stride}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigError("channel counts must be >= 1")
        if self.padding is None:
            # same-resolution padding
            object.__setattr__(self, "padding", self.dilation * self.radius)
        elif self.padding < 0:
            raise ConfigError(f"padding must be >= 0, got {self.padding}")

    @property
    def side(self) -> int:
        return 2 * self.radius + 1

    @property
    def parameter_count(self) -> int:
        return self.out_channels * (self.in_channels * self.side**2 + 1)

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.out_channels, self.in_channels, self.side, self.side)

    def output_size(self, size: int) -> int:
        span = self.dilation * (self.side - 1) + 1
        return (size + 2 * self.padding - span) // self.stride + 1


@dataclass
class ConvKernel:
    weights: np.ndarray
    bias: np.ndarray

    @classmethod
    def zeros(cls, spec: ConvSpec, dtype=np.float64) -> "ConvKernel":
        return cls(np.zeros(spec.weight_shape, dtype), np.zeros(spec.out_channels, dtype))

    @classmethod
    def he_normal(cls, spec: ConvSpec, rng: np.random.Generator, dtype=np.float64) -> "ConvKernel":
        fan_in = spec.in_channels * spec.side**2
        w = rng.standard_normal(spec.weight_shape) * np.sqrt(2.0 / fan_in)
        return cls(w.astype(dtype), np.zeros(spec.out_channels, dtype))

    def check(self, spec: ConvSpec) -> None:
        if self.weights.shape != spec.weight_shape:
            raise ShapeError(f"kernel shape {self.weights.shape} does not match spec {spec.weight_shape}")
        if self.bias.shape != (spec.out_channels,):
            raise ShapeError(f"bias shape {self.bias.shape} does not match {spec.out_channels} outputs")


@dataclass
class BatchNormState:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.9

    def __post_init__(self):
        if not self.eps > 0:
            raise ConfigError("batch-norm epsilon must be positive")
        if not 0 < self.momentum < 1:
            raise ConfigError("batch-norm momentum must lie in (0, 1)")

    @classmethod
    def identity(cls, channels: int, dtype=np.float64, eps: float = 1e-5, momentum: float = 0.9) -> "BatchNormState":
        return cls(
            gamma=np.ones(channels, dtype),
            beta=np.zeros(channels, dtype),
            running_mean=np.zeros(channels, dtype),
            running_var=np.ones(channels, dtype),
            eps=eps,
            momentum=momentum,
        )

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]


# ---------------------------------------------------------------------------
# dilated convolution


def _taps(xp: np.ndarray, side: int, dilation: int, stride: int, out_h: int, out_w: int) -> np.ndarray:
    """Gather (N, C, side, side, out_h, out_w) strided views of a padded input."""
    n, c = xp.shape[:2]
    cols = np.empty((n, c, side, side, out_h, out_w), dtype=xp.dtype)
    h_stop = stride * (out_h - 1) + 1
    w_stop = stride * (out_w - 1) + 1
    for i in range(side):
        for j in range(side):
            y0 = i * dilation
            x0 = j * dilation
            cols[:, :, i, j] = xp[:, :, y0 : y0 + h_stop : stride, x0 : x0 + w_stop : stride]
    return cols


def _untaps(dcols: np.ndarray, padded_shape, dilation: int, stride: int) -> np.ndarray:
    n, c, side, _, out_h, out_w = dcols.shape
    dxp = np.zeros(padded_shape, dtype=dcols.dtype)
    h_stop = stride * (out_h - 1) + 1
    w_stop = stride * (out_w - 1) + 1
    for i in range(side):
        for j in range(side):
            y0 = i * dilation
            x0 = j * dilation
            dxp[:, :, y0 : y0 + h_stop : stride, x0 : x0 + w_stop : stride] += dcols[:, :, i, j]
    return dxp


def conv_output_shape(input_shape, spec: ConvSpec) -> tuple[int, int, int, int]:
    n, c, h, w = input_shape
    if c != spec.in_channels:
        raise ShapeError(f"input has {c} channels, convolution expects {spec.in_channels}")
    out_h, out_w = spec.output_size(h), spec.output_size(w)
    if out_h < 1 or out_w < 1:
        raise ConfigError(
            f"convolution (r={spec.radius}, l={spec.dilation}, stride={spec.stride}, "
            f"padding={spec.padding}) leaves no output for a {h}x{w} input"
        )
    return (n, spec.out_channels, out_h, out_w)


def conv2d_dilated_forward(x: np.ndarray, kernel: ConvKernel, spec: ConvSpec):
    x = as_tensor4(x)
    kernel.check(spec)
    n, o, out_h, out_w = conv_output_shape(x.shape, spec)
    p = spec.padding
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    cols = _taps(xp, spec.side, spec.dilation, spec.stride, out_h, out_w)
    cols2 = cols.reshape(n, -1, out_h * out_w)
    # flip: true convolution == correlation with the reversed kernel
    wf = kernel.weights[:, :, ::-1, ::-1].reshape(o, -1)
    out = np.matmul(wf, cols2).reshape(n, o, out_h, out_w)
    out += kernel.bias.reshape(1, o, 1, 1)
    cache = (x.shape, xp.shape, cols2, kernel, spec)
    return out, cache


def conv2d_dilated_backward(upstream: np.ndarray, cache):
    """Return ``(grad_input, grad_weights, grad_bias)``."""
    x_shape, xp_shape, cols2, kernel, spec = cache
    n, o, out_h, out_w = upstream.shape
    if upstream.shape != (x_shape[0], spec.out_channels, spec.output_size(x_shape[2]), spec.output_size(x_shape[3])):
        raise ShapeError(f"upstream shape {upstream.shape} does not match convolution output")
    up2 = upstream.reshape(n, o, out_h * out_w)
    grad_bias = up2.sum(axis=(0, 2))
    gwf = np.einsum("noq,nkq->ok", up2, cols2, optimize=True)
    grad_weights = gwf.reshape(spec.weight_shape)[:, :, ::-1, ::-1].copy()
    wf = kernel.weights[:, :, ::-1, ::-1].reshape(o, -1)
    dcols = np.matmul(wf.T, up2).reshape(n, spec.in_channels, spec.side, spec.side, out_h, out_w)
    dxp = _untaps(dcols, xp_shape, spec.dilation, spec.stride)
    p = spec.padding
    grad_input = dxp[:, :, p : p + x_shape[2], p : p + x_shape[3]] if p else dxp
    return np.ascontiguousarray(grad_input), grad_weights, grad_bias


def conv2d_dilated(x: np.ndarray, kernel: ConvKernel, spec: ConvSpec) -> np.ndarray:
    return conv2d_dilated_forward(x, kernel, spec)[0]


def conv2d_dilated_grads(x, kernel: ConvKernel, spec: ConvSpec, upstream):
    """One-shot backward: recompute the forward cache and differentiate."""
    _, cache = conv2d_dilated_forward(x, kernel, spec)
    return conv2d_dilated_backward(np.asarray(upstream), cache)


# ---------------------------------------------------------------------------
# batch normalization


def batch_norm_forward(x: np.ndarray, state: BatchNormState, mode: str = "train"):
    x = as_tensor4(x)
    n, c, h, w = x.shape
    if c != state.channels:
        raise ShapeError(f"input has {c} channels, batch norm expects {state.channels}")
    g = state.gamma.reshape(1, c, 1, 1)
    b = state.beta.reshape(1, c, 1, 1)
    if mode == "train":
        count = n * h * w
        if count < 2:
            raise DomainError("batch statistics need at least two values per channel")
        mean = x.mean(axis=(0, 2, 3))
        centered = x - mean.reshape(1, c, 1, 1)
        var = (centered * centered).mean(axis=(0, 2, 3))
        inv_std = 1.0 / np.sqrt(var + state.eps)
        xhat = centered * inv_std.reshape(1, c, 1, 1)
        m = state.momentum
        state.running_mean[...] = m * state.running_mean + (1 - m) * mean
        state.running_var[...] = m * state.running_var + (1 - m) * var * (count / (count - 1))
        return g * xhat + b, ("train", xhat, inv_std, state)
    if mode == "inference":
        inv_std = 1.0 / np.sqrt(state.running_var + state.eps)
        xhat = (x - state.running_mean.reshape(1, c, 1, 1)) * inv_std.reshape(1, c, 1, 1)
        return g * xhat + b, ("inference", xhat, inv_std, state)
    raise ValueError(f"mode must be 'train' or 'inference', got {mode!r}")


def batch_norm_backward(upstream: np.ndarray, cache):
    """Return ``(grad_input, grad_gamma, grad_beta)``."""
    mode, xhat, inv_std, state = cache
    c = state.channels
    grad_beta = upstream.sum(axis=(0, 2, 3))
    grad_gamma = (upstream * xhat).sum(axis=(0, 2, 3))
    dxhat = upstream * state.gamma.reshape(1, c, 1, 1)
    if mode == "inference":
        return dxhat * inv_std.reshape(1, c, 1, 1), grad_gamma, grad_beta
    mean_d = dxhat.mean(axis=(0, 2, 3)).reshape(1, c, 1, 1)
    mean_dx = (dxhat * xhat).mean(axis=(0, 2, 3)).reshape(1, c, 1, 1)
    grad_input = (dxhat - mean_d - xhat * mean_dx) * inv_std.reshape(1, c, 1, 1)
    return grad_input, grad_gamma, grad_beta


def batch_norm(x: np.ndarray, state: BatchNormState, mode: str = "train") -> np.ndarray:
    return batch_norm_forward(x, state, mode)[0]


# ---------------------------------------------------------------------------
# max pooling


def max_pool(x: np.ndarray, window: int, stride: int, padding: int = 0):
    """Window maximum. Returns ``(output, argmax)``.

    ``argmax`` holds, per output element, the flat index into the input's
    (height * width) plane. Ties go to the first element in row-major order.
    """
    x = as_tensor4(x)
    if window < 1 or stride < 1:
        raise ConfigError("pool window and stride must be >= 1")
    n, c, h, w = x.shape
    if window > h + 2 * padding or window > w + 2 * padding:
        raise ConfigError(f"pool window {window} exceeds padded input {h + 2 * padding}x{w + 2 * padding}")
    out_h = (h + 2 * padding - window) // stride + 1
    out_w = (w + 2 * padding - window) // stride + 1
    xp = x
    if padding:
        xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)), constant_values=-np.inf)
    taps = _taps(xp, window, 1, stride, out_h, out_w).reshape(n, c, window * window, out_h, out_w)
    k = taps.argmax(axis=2)
    out = np.take_along_axis(taps, k[:, :, None], axis=2)[:, :, 0]
    iy = k // window + (np.arange(out_h) * stride).reshape(1, 1, out_h, 1) - padding
    ix = k % window + (np.arange(out_w) * stride).reshape(1, 1, 1, out_w) - padding
    return out, iy * w + ix


def max_pool_backward(upstream: np.ndarray, argmax: np.ndarray, input_shape) -> np.ndarray:
    n, c, h, w = input_shape
    if upstream.shape != argmax.shape:
        raise ShapeError(f"upstream shape {upstream.shape} does not match pooled shape {argmax.shape}")
    flat = np.zeros((n * c, h * w), dtype=upstream.dtype)
    rows = np.repeat(np.arange(n * c), argmax.shape[2] * argmax.shape[3])
    np.add.at(flat, (rows, argmax.reshape(-1)), upstream.reshape(-1))
    return flat.reshape(input_shape)


# ---------------------------------------------------------------------------
# channel-wise transposed convolution (learnable upsampling)


def deconv_kernel_side(factor: int) -> int:
    return 2 * factor - factor % 2


def bilinear_kernel(factor: int) -> np.ndarray:
    side = deconv_kernel_side(factor)
    center = factor - 1 if side % 2 == 1 else factor - 0.5
    og = 1.0 - np.abs(np.arange(side) - center) / factor
    return np.outer(og, og)


def bilinear_deconv_kernel(channels: int, factor: int, dtype=np.float64) -> ConvKernel:
    k = bilinear_kernel(factor)
    weights = np.broadcast_to(k, (channels, 1) + k.shape).astype(dtype)
    return ConvKernel(weights, np.zeros(channels, dtype))


@dataclass
class _DeconvCache:
    x: np.ndarray
    weights: np.ndarray
    factor: int
    pad: int
    full_shape: tuple


def deconv_upsample_forward(x: np.ndarray, factor: int, kernel: ConvKernel):
    x = as_tensor4(x)
    if factor < 2:
        raise ConfigError(f"upsampling factor must be >= 2, got {factor}")
    n, c, h, w = x.shape
    side = deconv_kernel_side(factor)
    if kernel.weights.shape != (c, 1, side, side):
        raise ShapeError(f"deconv weights {kernel.weights.shape} do not match {(c, 1, side, side)}")
    if kernel.bias.shape != (c,):
        raise ShapeError(f"deconv bias {kernel.bias.shape} does not match {c} channels")
    pad = (side - factor) // 2
    full = np.zeros((n, c, (h - 1) * factor + side, (w - 1) * factor + side), dtype=np.result_type(x, kernel.weights))
    wk = kernel.weights[:, 0]
    for i in range(side):
        for j in range(side):
            full[:, :, i : i + factor * (h - 1) + 1 : factor, j : j + factor * (w - 1) + 1 : factor] += (
                x * wk[:, i, j].reshape(1, c, 1, 1)
            )
    out = full[:, :, pad : pad + factor * h, pad : pad + factor * w] + kernel.bias.reshape(1, c, 1, 1)
    return np.ascontiguousarray(out), _DeconvCache(x, kernel.weights, factor, pad, full.shape)


def deconv_upsample_backward(upstream: np.ndarray, cache: _DeconvCache):
    """Return ``(grad_input, grad_weights, grad_bias)``."""
    x, weights, factor, pad = cache.x, cache.weights, cache.factor, cache.pad
    n, c, h, w = x.shape
    if upstream.shape != (n, c, factor * h, factor * w):
        raise ShapeError(f"upstream shape {upstream.shape} does not match deconv output")
    side = weights.shape[-1]
    full = np.zeros(cache.full_shape, dtype=upstream.dtype)
    full[:, :, pad : pad + factor * h, pad : pad + factor * w] = upstream
    grad_input = np.zeros_like(x, dtype=upstream.dtype)
    grad_weights = np.zeros_like(weights, dtype=upstream.dtype)
    wk = weights[:, 0]
    for i in range(side):
        for j in range(side):
            tap = full[:, :, i : i + factor * (h - 1) + 1 : factor, j : j + factor * (w - 1) + 1 : factor]
            grad_input += tap * wk[:, i, j].reshape(1, c, 1, 1)
            grad_weights[:, 0, i, j] = (tap * x).sum(axis=(0, 2, 3))
    grad_bias = upstream.sum(axis=(0, 2, 3))
    return grad_input, grad_weights, grad_bias


def deconv_upsample(x: np.ndarray, factor: int, kernel: ConvKernel) -> np.ndarray:
    return deconv_upsample_forward(x, factor, kernel)[0]


def relu_forward(x: np.ndarray):
    mask = x > 0
    return x * mask, mask


def relu_backward(upstream: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return upstream * mask

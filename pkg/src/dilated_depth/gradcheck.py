"""Central finite-difference checks of every analytic backward pass."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import conv_ops as ops
from .depth_head import LabelMap, multinomial_loss, softmax
from .network import ResidualBlock, build_network, toy_profile

STEP = 1e-5
LAYER_TOLERANCE = 1e-4
NETWORK_TOLERANCE = 1e-3
# denominator floor: exact-zero gradients (conv bias feeding batch norm)
# would otherwise turn round-off in the difference quotient into O(1) error
ERROR_FLOOR = 1e-5


@dataclass
class CheckResult:
    layer: str
    worst: float
    where: str
    tolerance: float
    checked: int
    kinks: int = 0

    @property
    def passed(self) -> bool:
        return self.worst < self.tolerance

    def line(self) -> str:
        status = "ok" if self.passed else "FAIL"
        skipped = f" (kinks resampled: {self.kinks})" if self.kinks else ""
        return f"{self.layer:<16} worst_rel={self.worst:.3e}  at {self.where:<24} n={self.checked:<5} {status}{skipped}"


def relative_error(analytic, numeric, floor: float = ERROR_FLOOR):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def numeric_partial(f: Callable[[], float], array: np.ndarray, index, step: float = STEP) -> float:
    """``(f(x + h) - f(x - h)) / 2h`` perturbing ``array[index]`` in place."""
    old = array[index]
    array[index] = old + step
    plus = f()
    array[index] = old - step
    minus = f()
    array[index] = old
    return (plus - minus) / (2 * step)


def straddles_kink(f: Callable[[], float], array: np.ndarray, index, step: float = STEP,
                   tolerance: float = NETWORK_TOLERANCE) -> bool:
    """True when the one-sided slopes at ``array[index]`` disagree.

    A ReLU or max-pool switch inside ``[x - h, x + h]`` makes the central
    difference meaningless there. The test uses function values only, so it
    cannot mask an error in the analytic gradient.
    """
    old = array[index]
    centre = f()
    array[index] = old + step
    right = (f() - centre) / step
    array[index] = old - step
    left = (centre - f()) / step
    array[index] = old
    return float(relative_error(right, left)) >= tolerance


def compare(
    layer: str,
    f: Callable[[], float],
    arrays: dict[str, np.ndarray],
    analytic: dict[str, np.ndarray],
    tolerance: float = LAYER_TOLERANCE,
    samples: list[tuple[str, tuple]] | None = None,
) -> CheckResult:
    """Check ``analytic[name][idx]`` against finite differences of ``f``.

    Every coordinate is checked unless ``samples`` restricts the set.
    """
    if samples is None:
        samples = [(name, idx) for name, arr in arrays.items() for idx in np.ndindex(arr.shape)]
    worst, where = 0.0, "-"
    for name, idx in samples:
        num = numeric_partial(f, arrays[name], idx)
        err = float(relative_error(analytic[name][idx], num))
        if err >= worst:
            worst, where = err, f"{name}[{', '.join(map(str, idx))}]"
    return CheckResult(layer, worst, where, tolerance, len(samples))


def _objective(forward: Callable[[], np.ndarray], upstream: np.ndarray) -> Callable[[], float]:
    return lambda: float(np.sum(forward() * upstream))


def check_conv(rng, dilation: int, stride: int = 1) -> CheckResult:
    spec = ops.ConvSpec(1, dilation, stride, None, 2, 3)
    x = rng.standard_normal((1, 2, 5, 5))
    kernel = ops.ConvKernel(rng.standard_normal(spec.weight_shape), rng.standard_normal(3))
    out, cache = ops.conv2d_dilated_forward(x, kernel, spec)
    up = rng.standard_normal(out.shape)
    gx, gw, gb = ops.conv2d_dilated_backward(up, cache)
    f = _objective(lambda: ops.conv2d_dilated(x, kernel, spec), up)
    name = f"conv_l{dilation}" + (f"_s{stride}" if stride > 1 else "")
    return compare(
        name, f, {"input": x, "weights": kernel.weights, "bias": kernel.bias},
        {"input": gx, "weights": gw, "bias": gb},
    )


def check_batchnorm(rng) -> CheckResult:
    x = rng.standard_normal((2, 3, 4, 4)) * 2 + 0.5
    state = ops.BatchNormState.identity(3)
    state.gamma[:] = rng.uniform(0.5, 1.5, 3)
    state.beta[:] = rng.standard_normal(3)
    out, cache = ops.batch_norm_forward(x, state, "train")
    up = rng.standard_normal(out.shape)
    gx, gg, gb = ops.batch_norm_backward(up, cache)
    f = _objective(lambda: ops.batch_norm(x, state, "train"), up)
    return compare("batchnorm", f, {"input": x, "gamma": state.gamma, "beta": state.beta},
                   {"input": gx, "gamma": gg, "beta": gb})


def check_maxpool(rng, window: int = 2, stride: int = 2) -> CheckResult:
    # distinct values spaced well beyond the step: no argmax switches
    x = rng.permutation(2 * 2 * 6 * 6).reshape(2, 2, 6, 6) * 0.01
    out, argmax = ops.max_pool(x, window, stride)
    up = rng.standard_normal(out.shape)
    gx = ops.max_pool_backward(up, argmax, x.shape)
    f = _objective(lambda: ops.max_pool(x, window, stride)[0], up)
    return compare(f"maxpool_w{window}s{stride}", f, {"input": x}, {"input": gx})


def check_deconv(rng, factor: int) -> CheckResult:
    side = ops.deconv_kernel_side(factor)
    x = rng.standard_normal((1, 2, 3, 3))
    kernel = ops.ConvKernel(rng.standard_normal((2, 1, side, side)), rng.standard_normal(2))
    out, cache = ops.deconv_upsample_forward(x, factor, kernel)
    up = rng.standard_normal(out.shape)
    gx, gw, gb = ops.deconv_upsample_backward(up, cache)
    f = _objective(lambda: ops.deconv_upsample(x, factor, kernel), up)
    return compare(f"deconv_x{factor}", f, {"input": x, "weights": kernel.weights, "bias": kernel.bias},
                   {"input": gx, "weights": gw, "bias": gb})


def check_relu(rng) -> CheckResult:
    x = rng.standard_normal((1, 2, 4, 4))
    x[np.abs(x) < 1e-3] = 0.5
    out, mask = ops.relu_forward(x)
    up = rng.standard_normal(out.shape)
    gx = ops.relu_backward(up, mask)
    f = _objective(lambda: ops.relu_forward(x)[0], up)
    return compare("relu", f, {"input": x}, {"input": gx})


def check_residual_block(rng) -> CheckResult:
    block = ResidualBlock("block", 3, 4, 2, 2, True, rng, np.float64)
    for _, value, _ in block.named_parameters():
        value[...] += 0.1 * rng.standard_normal(value.shape)
    x = rng.standard_normal((2, 3, 6, 6))
    out = block.forward(x, "train")
    up = rng.standard_normal(out.shape)
    block.zero_grad()
    gx = block.backward(up)
    arrays = {"input": x}
    analytic = {"input": gx}
    for name, value, grad in block.named_parameters():
        arrays[name] = value
        analytic[name] = grad.copy()
    f = _objective(lambda: block.forward(x, "train"), up)
    return compare("residual_block", f, arrays, analytic)


def check_loss_head(rng, m: int = 5) -> CheckResult:
    logits = rng.standard_normal((2, m, 3, 3))
    labels = LabelMap(rng.integers(0, m, (2, 3, 3)), rng.random((2, 3, 3)) > 0.2)
    _, grad = multinomial_loss(softmax(logits), labels)
    f = lambda: multinomial_loss(softmax(logits), labels)[0]  # noqa: E731
    return compare("loss_head", f, {"logits": logits}, {"logits": grad})


def check_network(rng, samples: int = 20, seed: int = 0) -> CheckResult:
    """End-to-end check on a toy network at ``samples`` random parameters."""
    config = toy_profile(bins=6, sigma=1 / 16)
    net = build_network(config, seed, "standard")
    images = rng.standard_normal((2, 3, 16, 16))
    labels = LabelMap(rng.integers(0, 6, (2, 16, 16)), np.ones((2, 16, 16), bool))

    def f():
        return multinomial_loss(softmax(net.forward(images, "train")), labels)[0]

    net.zero_grad()
    _, grad = multinomial_loss(softmax(net.forward(images, "train")), labels)
    net.backward(grad)
    analytic = {name: g.copy() for name, g in net.grads.items()}
    names = list(net.params)
    sizes = np.array([net.params[n].size for n in names])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    picks, kinks = [], 0
    for k in rng.permutation(sizes.sum()):
        i = int(np.searchsorted(offsets, k, side="right") - 1)
        pick = (names[i], np.unravel_index(int(k - offsets[i]), net.params[names[i]].shape))
        if straddles_kink(f, net.params[pick[0]], pick[1]):
            kinks += 1
            continue
        picks.append(pick)
        if len(picks) == samples:
            break
    result = compare("network", f, net.params, analytic, NETWORK_TOLERANCE, picks)
    result.kinks = kinks
    return result


def run_suite(seed: int = 0) -> list[CheckResult]:
    """Every layer kind plus the end-to-end toy network, in standard precision."""
    rng = np.random.default_rng(seed)
    results = [check_conv(rng, l) for l in (1, 2, 4)]
    results.append(check_conv(rng, 2, stride=2))
    results.append(check_batchnorm(rng))
    results.append(check_maxpool(rng))
    results.append(check_maxpool(rng, 3, 2))
    results.append(check_relu(rng))
    results.extend(check_deconv(rng, f) for f in (2, 4))
    results.append(check_residual_block(rng))
    results.append(check_loss_head(rng))
    results.append(check_network(rng, seed=seed))
    return results

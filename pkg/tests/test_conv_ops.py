import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dilated_depth import ConfigError, DomainError, ShapeError
from dilated_depth import conv_ops as ops

from .oracles import dilated_conv_direct, max_pool_direct, transposed_conv_direct


def centre_kernel(channels=1, radius=1):
    side = 2 * radius + 1
    w = np.zeros((channels, channels, side, side))
    for c in range(channels):
        w[c, c, radius, radius] = 1.0
    return ops.ConvKernel(w, np.zeros(channels))


def test_identity_kernel_l1():
    x = np.arange(9.0).reshape(1, 1, 3, 3)
    spec = ops.ConvSpec(1, 1, 1, 1, 1, 1)
    np.testing.assert_array_equal(ops.conv2d_dilated(x, centre_kernel(), spec), x)


@pytest.mark.parametrize("dilation", [2, 4])
def test_identity_kernel_dilated(rng, dilation):
    x = rng.standard_normal((2, 3, 7, 6))
    spec = ops.ConvSpec(1, dilation, 1, None, 3, 3)
    np.testing.assert_array_equal(ops.conv2d_dilated(x, centre_kernel(3), spec), x)


def test_ramp_single_tap_shift():
    # ramp F(y, x) = 7y + x; only tap t = (1, 0) is set, so out(p) = F(p - (2, 0))
    y, x = np.mgrid[0:7, 0:7]
    ramp = (7.0 * y + x).reshape(1, 1, 7, 7)
    w = np.zeros((1, 1, 3, 3))
    w[0, 0, 2, 1] = 1.0
    spec = ops.ConvSpec(1, 2, 1, 2, 1, 1)
    out = ops.conv2d_dilated(ramp, ops.ConvKernel(w, np.zeros(1)), spec)
    expected = np.zeros((7, 7))
    expected[2:] = ramp[0, 0, :-2]
    np.testing.assert_array_equal(out[0, 0], expected)
    np.testing.assert_array_equal(out, dilated_conv_direct(ramp, w, np.zeros(1), 2))


def test_ramp_frozen_corner_values():
    y, x = np.mgrid[0:7, 0:7]
    ramp = (7.0 * y + x).reshape(1, 1, 7, 7)
    w = np.zeros((1, 1, 3, 3))
    w[0, 0, 2, 1] = 1.0
    out = ops.conv2d_dilated(ramp, ops.ConvKernel(w, np.zeros(1)), ops.ConvSpec(1, 2, 1, 2, 1, 1))
    assert out[0, 0, 1, 3] == 0.0
    assert out[0, 0, 2, 3] == 3.0
    assert out[0, 0, 6, 6] == 34.0


@pytest.mark.parametrize("dilation,stride,radius", [(1, 1, 1), (2, 1, 1), (4, 1, 1), (2, 2, 1), (1, 2, 3), (3, 1, 2)])
def test_matches_direct_sum(rng, dilation, stride, radius):
    x = rng.standard_normal((2, 3, 9, 8))
    side = 2 * radius + 1
    w = rng.standard_normal((4, 3, side, side))
    b = rng.standard_normal(4)
    spec = ops.ConvSpec(radius, dilation, stride, None, 3, 4)
    got = ops.conv2d_dilated(x, ops.ConvKernel(w, b), spec)
    want = dilated_conv_direct(x, w, b, dilation, stride)
    assert got.shape == want.shape
    np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)


def test_output_size_formula():
    spec = ops.ConvSpec(3, 1, 2, 3, 3, 16)
    assert spec.output_size(32) == 16
    assert ops.ConvSpec(1, 4, 1, 0, 1, 1).output_size(9) == 1


def test_channel_mismatch():
    spec = ops.ConvSpec(1, 1, 1, None, 2, 2)
    kernel = ops.ConvKernel.zeros(spec)
    with pytest.raises(ShapeError):
        ops.conv2d_dilated(np.zeros((1, 3, 5, 5)), kernel, spec)


def test_non_positive_output():
    spec = ops.ConvSpec(1, 4, 1, 0, 1, 1)
    with pytest.raises(ConfigError):
        ops.conv2d_dilated(np.zeros((1, 1, 5, 5)), ops.ConvKernel.zeros(spec), spec)


def test_backward_zero_upstream(rng):
    spec = ops.ConvSpec(1, 2, 1, None, 2, 3)
    kernel = ops.ConvKernel(rng.standard_normal(spec.weight_shape), rng.standard_normal(3))
    out, cache = ops.conv2d_dilated_forward(rng.standard_normal((1, 2, 6, 6)), kernel, spec)
    for g in ops.conv2d_dilated_backward(np.zeros_like(out), cache):
        assert not np.any(g)


def test_backward_is_adjoint(rng):
    # <conv(x), u> == <x, conv^T(u)> for the bias-free operator
    spec = ops.ConvSpec(1, 2, 2, None, 3, 2)
    kernel = ops.ConvKernel(rng.standard_normal(spec.weight_shape), np.zeros(2))
    x = rng.standard_normal((2, 3, 9, 9))
    out, cache = ops.conv2d_dilated_forward(x, kernel, spec)
    u = rng.standard_normal(out.shape)
    gx, _, _ = ops.conv2d_dilated_backward(u, cache)
    assert np.isclose(np.sum(out * u), np.sum(x * gx), rtol=1e-12)


def test_parameter_count_independent_of_dilation():
    counts = {ops.ConvSpec(1, l, 1, None, 8, 16).parameter_count for l in (1, 2, 4, 8)}
    assert counts == {8 * 16 * 9 + 16}


# -- batch norm ---------------------------------------------------------------


def test_batchnorm_normalised_input(rng):
    x = rng.standard_normal((4, 2, 5, 5))
    x = (x - x.mean(axis=(0, 2, 3), keepdims=True)) / x.std(axis=(0, 2, 3), keepdims=True)
    out = ops.batch_norm(x, ops.BatchNormState.identity(2), "train")
    np.testing.assert_allclose(out, x / np.sqrt(1 + 1e-5), rtol=1e-12)


def test_batchnorm_zero_scale(rng):
    state = ops.BatchNormState.identity(3)
    state.gamma[:] = 0.0
    state.beta[:] = [1.0, -2.0, 0.5]
    out = ops.batch_norm(rng.standard_normal((2, 3, 3, 3)), state, "train")
    np.testing.assert_array_equal(out, np.broadcast_to(state.beta[None, :, None, None], out.shape))


def test_batchnorm_hand_values():
    x = np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 1, 2, 2)
    out = ops.batch_norm(x, ops.BatchNormState.identity(1), "train")
    np.testing.assert_allclose(out.ravel(), [-1.3416, -0.4472, 0.4472, 1.3416], atol=1e-3)


def test_batchnorm_running_stats_update():
    x = np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 1, 2, 2)
    state = ops.BatchNormState.identity(1)
    ops.batch_norm(x, state, "train")
    assert state.running_mean[0] == pytest.approx(0.25)
    # unbiased batch variance 5/3 blended into the initial 1.0
    assert state.running_var[0] == pytest.approx(0.9 + 0.1 * 5 / 3)


def test_batchnorm_inference_uses_running_stats():
    state = ops.BatchNormState.identity(1)
    state.running_mean[:] = 2.0
    state.running_var[:] = 4.0
    out = ops.batch_norm(np.full((1, 1, 1, 1), 6.0), state, "inference")
    assert out.item() == pytest.approx(4.0 / np.sqrt(4.0 + 1e-5))


def test_batchnorm_degenerate_batch():
    with pytest.raises(DomainError):
        ops.batch_norm(np.ones((1, 1, 1, 1)), ops.BatchNormState.identity(1), "train")


# -- max pool -----------------------------------------------------------------


@pytest.mark.parametrize("window", [1, 2, 3])
def test_pool_constant(window):
    out, _ = ops.max_pool(np.full((1, 2, 6, 6), 2.5), window, window)
    assert np.all(out == 2.5)


def test_pool_single_window():
    out, _ = ops.max_pool(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2), 2, 2)
    assert out.item() == 4.0


@pytest.mark.parametrize("window,stride", [(2, 2), (3, 2), (3, 1)])
def test_pool_matches_window_scan(rng, window, stride):
    x = rng.standard_normal((2, 3, 6, 6))
    out, _ = ops.max_pool(x, window, stride)
    np.testing.assert_array_equal(out, max_pool_direct(x, window, stride))


def test_pool_tie_goes_to_first():
    x = np.ones((1, 1, 2, 2))
    out, argmax = ops.max_pool(x, 2, 2)
    up = np.ones_like(out)
    g = ops.max_pool_backward(up, argmax, x.shape)
    assert g.ravel().tolist() == [1.0, 0.0, 0.0, 0.0]


def test_pool_window_too_large():
    with pytest.raises(ConfigError):
        ops.max_pool(np.zeros((1, 1, 2, 2)), 3, 1)


# -- deconvolution ------------------------------------------------------------


def test_bilinear_constant_interior():
    x = np.full((1, 2, 5, 5), 3.0)
    kernel = ops.bilinear_deconv_kernel(2, 4)
    out = ops.deconv_upsample(x, 4, kernel)
    assert out.shape == (1, 2, 20, 20)
    # away from the zero-padded border every output pixel sees a full partition of unity
    np.testing.assert_allclose(out[:, :, 2:-2, 2:-2], 3.0, rtol=1e-12)


def test_bilinear_one_pixel_gives_central_taps():
    kernel = ops.bilinear_deconv_kernel(1, 2)
    out = ops.deconv_upsample(np.ones((1, 1, 1, 1)), 2, kernel)
    side = kernel.weights.shape[-1]
    assert side == 4
    np.testing.assert_array_equal(out[0, 0], kernel.weights[0, 0, 1:3, 1:3])
    np.testing.assert_allclose(out[0, 0], [[0.5625, 0.5625], [0.5625, 0.5625]])


@pytest.mark.parametrize("factor", [2, 3, 4])
def test_deconv_matches_scatter(rng, factor):
    x = rng.standard_normal((2, 3, 4, 3))
    side = ops.deconv_kernel_side(factor)
    kernel = ops.ConvKernel(rng.standard_normal((3, 1, side, side)), np.zeros(3))
    got = ops.deconv_upsample(x, factor, kernel)
    want = transposed_conv_direct(x, kernel.weights, factor, (side - factor) // 2)
    np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-13)


def test_deconv_channel_mismatch():
    with pytest.raises(ShapeError):
        ops.deconv_upsample(np.zeros((1, 3, 2, 2)), 2, ops.bilinear_deconv_kernel(2, 2))


def test_relu_backward_masks():
    x = np.array([-1.0, 0.0, 2.0]).reshape(1, 1, 1, 3)
    out, mask = ops.relu_forward(x)
    assert out.ravel().tolist() == [0.0, 0.0, 2.0]
    assert ops.relu_backward(np.ones_like(x), mask).ravel().tolist() == [0.0, 0.0, 1.0]


@settings(max_examples=40, deadline=None)
@given(
    h=st.integers(3, 9),
    w=st.integers(3, 9),
    radius=st.integers(0, 2),
    dilation=st.integers(1, 3),
    stride=st.integers(1, 2),
    seed=st.integers(0, 2**16),
)
def test_property_direct_sum(h, w, radius, dilation, stride, seed):
    spec = ops.ConvSpec(radius, dilation, stride, None, 2, 2)
    r = np.random.default_rng(seed)
    x = r.standard_normal((1, 2, h, w))
    k = ops.ConvKernel(r.standard_normal(spec.weight_shape), r.standard_normal(2))
    np.testing.assert_allclose(
        ops.conv2d_dilated(x, k, spec), dilated_conv_direct(x, k.weights, k.bias, dilation, stride),
        rtol=1e-12, atol=1e-12,
    )


@pytest.mark.parametrize("dilation", [1, 2, 4])
def test_same_padding_keeps_resolution(rng, dilation):
    spec = ops.ConvSpec(1, dilation, 1, None, 2, 3)
    out = ops.conv2d_dilated(rng.standard_normal((1, 2, 11, 9)), ops.ConvKernel.zeros(spec), spec)
    assert out.shape == (1, 3, 11, 9)


def test_conv_is_linear(rng):
    spec = ops.ConvSpec(1, 2, 1, None, 3, 2)
    kernel = ops.ConvKernel(rng.standard_normal(spec.weight_shape), np.zeros(2))
    x, y = rng.standard_normal((2, 2, 3, 8, 8))
    a, b = 1.7, -0.3
    lhs = ops.conv2d_dilated(a * x + b * y, kernel, spec)
    rhs = a * ops.conv2d_dilated(x, kernel, spec) + b * ops.conv2d_dilated(y, kernel, spec)
    assert np.max(np.abs(lhs - rhs)) <= 1e-10 * np.max(np.abs(rhs))


def test_pool_backward_conserves_mass(rng):
    x = rng.standard_normal((2, 3, 8, 8))
    out, argmax = ops.max_pool(x, 3, 2, padding=1)
    up = rng.standard_normal(out.shape)
    g = ops.max_pool_backward(up, argmax, x.shape)
    assert g.sum() == pytest.approx(up.sum(), rel=1e-12)
    assert np.count_nonzero(g) <= up.size

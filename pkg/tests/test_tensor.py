import numpy as np
import pytest

from dilated_depth import Precision, ShapeError, SizeError, add, concat_channels, tensor_fill
from dilated_depth.tensor import check_dims, slice_channels


def test_fill_zero_map():
    t = tensor_fill((1, 1, 2, 2), 0.0)
    assert t.shape == (1, 1, 2, 2)
    assert np.all(t == 0.0)


def test_fill_constant_counts_elements():
    t = tensor_fill((1, 3, 4, 4), 1.5)
    assert t.size == 48
    assert np.all(t == 1.5)


def test_fill_scalars():
    t = tensor_fill((2, 1, 1, 1), -3.0)
    assert t.ravel().tolist() == [-3.0, -3.0]


def test_fill_precision_selects_dtype():
    assert tensor_fill((1, 1, 1, 1), 1.0, "compact").dtype == np.float32
    assert tensor_fill((1, 1, 1, 1), 1.0, Precision.STANDARD).dtype == np.float64


@pytest.mark.parametrize("shape", [(0, 1, 2, 2), (1, 1, 0, 2), (1, 1, 2), (-1, 1, 1, 1)])
def test_fill_rejects_bad_dims(shape):
    with pytest.raises((SizeError, ShapeError)):
        tensor_fill(shape, 1.0)


def test_fill_rejects_overflowing_dims():
    with pytest.raises(SizeError):
        check_dims((65536, 65536, 2, 1))


def test_add_identity_and_inverse(rng):
    x = rng.standard_normal((2, 3, 4, 5))
    np.testing.assert_array_equal(add(x, np.zeros_like(x)), x)
    np.testing.assert_array_equal(add(x, -x), np.zeros_like(x))


def test_add_elementwise():
    a = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2)
    b = np.array([[10.0, 20.0], [30.0, 40.0]]).reshape(1, 1, 2, 2)
    assert add(a, b).reshape(2, 2).tolist() == [[11, 22], [33, 44]]


def test_add_shape_mismatch():
    with pytest.raises(ShapeError):
        add(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 2, 3)))


def test_concat_shape(rng):
    out = concat_channels(rng.standard_normal((1, 2, 4, 4)), rng.standard_normal((1, 3, 4, 4)))
    assert out.shape == (1, 5, 4, 4)


def test_concat_rejects_empty_channels():
    with pytest.raises(ShapeError):
        concat_channels(np.zeros((1, 2, 4, 4)), np.zeros((1, 0, 4, 4)))


def test_concat_rejects_spatial_mismatch():
    with pytest.raises(ShapeError):
        concat_channels(np.zeros((1, 2, 4, 4)), np.zeros((1, 2, 4, 5)))


def test_slice_inverts_concat(rng):
    a, b = rng.standard_normal((2, 2, 3, 3)), rng.standard_normal((2, 4, 3, 3))
    both = concat_channels(a, b)
    np.testing.assert_array_equal(slice_channels(both, 0, 2), a)
    np.testing.assert_array_equal(slice_channels(both, 2, 6), b)


def test_precision_env(monkeypatch):
    monkeypatch.setenv("RDT_PRECISION", "standard")
    assert Precision.from_env() is Precision.STANDARD
    monkeypatch.setenv("RDT_PRECISION", "half")
    with pytest.raises(ValueError):
        Precision.from_env()

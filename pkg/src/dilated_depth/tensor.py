"""Rank-4 (batch, channel, height, width) arrays.

Tensors are plain ``numpy.ndarray`` objects in C order. The helpers here
validate shapes and never broadcast or mutate their inputs.
"""

from __future__ import annotations

import enum
import os

import numpy as np

from .errors import ShapeError, SizeError

_MAX_ELEMENTS = 2**31 - 1


class Precision(enum.Enum):
    STANDARD = "standard"
    COMPACT = "compact"

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(np.float64 if self is Precision.STANDARD else np.float32)

    @classmethod
    def parse(cls, value: "str | Precision") -> "Precision":
        if isinstance(value, Precision):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValueError(f"unknown precision {value!r}; expected 'standard' or 'compact'") from None

    @classmethod
    def from_env(cls, default: "str | Precision" = "compact") -> "Precision":
        return cls.parse(os.environ.get("RDT_PRECISION", default))


def check_dims(shape) -> tuple[int, int, int, int]:
    shape = tuple(int(d) for d in shape)
    if len(shape) != 4:
        raise ShapeError(f"expected 4 dimensions, got {len(shape)}")
    if any(d < 1 for d in shape):
        raise SizeError(f"all dimensions must be >= 1, got {shape}")
    total = 1
    for d in shape:
        total *= d
    if total > _MAX_ELEMENTS:
        raise SizeError(f"shape {shape} has {total} elements, more than {_MAX_ELEMENTS}")
    return shape


def as_tensor4(x, dtype=None) -> np.ndarray:
    arr = np.asarray(x, dtype=dtype)
    check_dims(arr.shape)
    return arr


def tensor_fill(shape, value: float, precision: Precision | str = Precision.STANDARD) -> np.ndarray:
    shape = check_dims(shape)
    return np.full(shape, value, dtype=Precision.parse(precision).dtype)


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = as_tensor4(a)
    b = as_tensor4(b)
    if a.shape != b.shape:
        raise ShapeError(f"cannot add shapes {a.shape} and {b.shape}")
    return a + b


def concat_channels(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Stack ``b``'s channels after ``a``'s."""
    for t in (a, b):
        if np.ndim(t) == 4 and np.shape(t)[1] < 1:
            raise ShapeError(f"cannot concatenate a tensor with no channels: {np.shape(t)}")
    a = as_tensor4(a)
    b = as_tensor4(b)
    if (a.shape[0], a.shape[2], a.shape[3]) != (b.shape[0], b.shape[2], b.shape[3]):
        raise ShapeError(f"cannot concatenate {a.shape} and {b.shape} along channels")
    return np.concatenate([a, b], axis=1)


def slice_channels(x: np.ndarray, start: int, stop: int) -> np.ndarray:
    x = as_tensor4(x)
    if not 0 <= start < stop <= x.shape[1]:
        raise ShapeError(f"channel range [{start}, {stop}) invalid for {x.shape[1]} channels")
    return x[:, start:stop].copy()

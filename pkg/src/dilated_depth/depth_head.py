"""Log-space depth bins, softmax classification loss and depth read-out.

Depth is discretized into ``m`` bins of equal width in log space. The
network predicts a probability vector over bins per pixel; depth is read
out either as ``exp(w . p)`` with ``w`` the log bin centers (soft weight
sum) or as the center of the most probable bin (hard threshold).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DomainError, ShapeError


@dataclass(frozen=True)
class BinSpec:
    d_min: float
    d_max: float
    m: int

    def __post_init__(self):
        if not (np.isfinite(self.d_min) and np.isfinite(self.d_max)):
            raise DomainError("depth range must be finite")
        if not 0 < self.d_min < self.d_max:
            raise DomainError(f"need 0 < d_min < d_max, got d_min={self.d_min}, d_max={self.d_max}")
        if int(self.m) != self.m or self.m < 2:
            raise DomainError(f"bin count must be an integer >= 2, got {self.m}")

    @cached_property
    def log_min(self) -> float:
        return float(np.log(self.d_min))

    @cached_property
    def delta(self) -> float:
        """Width of every bin in natural-log units."""
        return float((np.log(self.d_max) - np.log(self.d_min)) / self.m)

    @cached_property
    def log_edges(self) -> np.ndarray:
        return self.log_min + np.arange(self.m + 1) * self.delta

    @cached_property
    def edges(self) -> np.ndarray:
        return np.exp(self.log_edges)

    @cached_property
    def weights(self) -> np.ndarray:
        """Log bin centers; the weight vector of the soft read-out."""
        return self.log_min + (np.arange(self.m) + 0.5) * self.delta

    @cached_property
    def centers(self) -> np.ndarray:
        return np.exp(self.weights)


def make_bins(d_min: float, d_max: float, m: int) -> BinSpec:
    return BinSpec(float(d_min), float(d_max), int(m))


@dataclass
class DepthMap:
    """Depth in meters with shape (n, 1, h, w) and a boolean validity mask."""

    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 2:
            self.values = self.values[None, None]
        elif self.values.ndim == 3:
            self.values = self.values[:, None]
        self.mask = np.broadcast_to(np.asarray(self.mask, dtype=bool), self.values.shape).copy()
        if self.values.ndim != 4 or self.values.shape[1] != 1:
            raise ShapeError(f"depth maps have shape (n, 1, h, w), got {self.values.shape}")
        if np.any(self.mask & ~(self.values > 0)):
            raise DomainError("valid depth pixels must be strictly positive")

    @classmethod
    def from_values(cls, values) -> "DepthMap":
        """Wrap raw depths; non-positive and non-finite pixels become invalid."""
        values = np.asarray(values, dtype=np.float64)
        mask = np.isfinite(values) & (values > 0)
        return cls(np.where(mask, values, 0.0), mask)

    @property
    def shape(self):
        return self.values.shape

    def to_sentinel(self) -> np.ndarray:
        """Values with invalid pixels set to 0, the on-disk encoding."""
        return np.where(self.mask, self.values, 0.0)

    def __getitem__(self, index) -> "DepthMap":
        return DepthMap(self.values[index], self.mask[index])


@dataclass
class LabelMap:
    """Per-pixel bin index with shape (n, h, w) and a validity mask."""

    labels: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.mask = np.broadcast_to(np.asarray(self.mask, dtype=bool), self.labels.shape).copy()

    @property
    def n_valid(self) -> int:
        return int(self.mask.sum())


def _as_depth(depth) -> DepthMap:
    return depth if isinstance(depth, DepthMap) else DepthMap.from_values(depth)


def depth_to_label(depth, bins: BinSpec) -> LabelMap:
    """Index of the log-space interval containing each depth, clamped to [0, m)."""
    depth = _as_depth(depth)
    safe = np.where(depth.mask, depth.values, bins.d_min)[:, 0]
    idx = np.floor((np.log(safe) - bins.log_min) / bins.delta)
    labels = np.clip(idx, 0, bins.m - 1).astype(np.int64)
    mask = depth.mask[:, 0]
    return LabelMap(np.where(mask, labels, 0), mask)


def softmax(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits)
    if logits.ndim != 4 or logits.shape[1] < 2:
        raise ShapeError(f"softmax needs (n, m>=2, h, w) logits, got {logits.shape}")
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def multinomial_loss(scores: np.ndarray, labels: LabelMap) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood over valid pixels and its gradient w.r.t. logits.

    ``scores`` are softmax probabilities; the returned gradient is with
    respect to the logits that produced them, ``(p - onehot(k)) / N``.
    """
    n, m, h, w = scores.shape
    if labels.labels.shape != (n, h, w):
        raise ShapeError(f"labels {labels.labels.shape} do not match scores {scores.shape}")
    count = labels.n_valid
    if count == 0:
        raise DomainError("no valid pixels to average the loss over")
    if np.any(labels.mask & ((labels.labels < 0) | (labels.labels >= m))):
        raise DomainError(f"labels outside [0, {m})")
    k = labels.labels[:, None]
    pk = np.take_along_axis(scores, k, axis=1)[:, 0]
    tiny = np.finfo(scores.dtype).tiny
    nll = -np.log(np.maximum(pk[labels.mask], tiny))
    loss = float(np.sum(nll, dtype=np.float64) / count)
    grad = scores.copy()
    onehot = np.zeros_like(scores)
    np.put_along_axis(onehot, k, 1.0, axis=1)
    grad -= onehot
    grad *= labels.mask[:, None] / count
    return loss, grad


def soft_weight_sum(scores: np.ndarray, bins: BinSpec) -> DepthMap:
    """Depth ``exp(sum_j w_j p_j)`` with ``w`` the log bin centers."""
    if scores.shape[1] != bins.m:
        raise ShapeError(f"scores have {scores.shape[1]} bins, bin spec has {bins.m}")
    log_d = np.tensordot(bins.weights, scores.astype(np.float64), axes=([0], [1]))
    log_d = np.clip(log_d, bins.weights[0], bins.weights[-1])
    values = np.exp(log_d)[:, None]
    return DepthMap(values, np.ones(values.shape, bool))


def hard_threshold(scores: np.ndarray, bins: BinSpec) -> DepthMap:
    """Center of the most probable bin; ties resolve to the lowest index."""
    if scores.shape[1] != bins.m:
        raise ShapeError(f"scores have {scores.shape[1]} bins, bin spec has {bins.m}")
    values = bins.centers[scores.argmax(axis=1)][:, None]
    return DepthMap(values, np.ones(values.shape, bool))


INFERENCE_RULES = {"soft": soft_weight_sum, "hard": hard_threshold}


def infer_depth(scores: np.ndarray, bins: BinSpec, rule: str = "soft") -> DepthMap:
    if rule not in INFERENCE_RULES:
        raise DomainError(f"inference rule must be 'soft' or 'hard', got {rule!r}")
    return INFERENCE_RULES[rule](scores, bins)

"""Depth error metrics, pixel accuracy and bin confusion statistics."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .depth_head import BinSpec, DepthMap, LabelMap, depth_to_label
from .errors import DomainError, ParseError, ShapeError

THRESHOLD = 1.25
RECORD_KEYS = ("delta1", "delta2", "delta3", "rel", "log10", "rms", "pixel_acc", "n_valid")


@dataclass(frozen=True)
class MetricsReport:
    delta1: float
    delta2: float
    delta3: float
    rel: float
    log10: float
    rms: float
    pixel_acc: float
    n_valid: int

    def to_record(self) -> str:
        """One ``key=value`` line per metric; floats use round-trippable repr."""
        return "".join(f"{key}={getattr(self, key)!r}\n" for key in RECORD_KEYS)

    def to_text(self) -> str:
        return "".join(
            f"{key:<10}{getattr(self, key)}\n" if key == "n_valid" else f"{key:<10}{getattr(self, key):.6f}\n"
            for key in RECORD_KEYS
        )

    @classmethod
    def from_record(cls, text: str) -> "MetricsReport":
        values = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            key, sep, value = line.partition("=")
            if not sep or key not in RECORD_KEYS:
                raise ParseError(f"bad metrics record {line!r}", lineno)
            values[key] = int(value) if key == "n_valid" else float(value)
        missing = set(RECORD_KEYS) - set(values)
        if missing:
            raise ParseError(f"metrics record lacks {sorted(missing)}")
        return cls(**values)

    def as_dict(self) -> dict:
        return asdict(self)


def compute_metrics(pred: DepthMap, gt: DepthMap, bins: BinSpec) -> MetricsReport:
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    valid = pred.mask & gt.mask
    count = int(valid.sum())
    if count == 0:
        raise DomainError("prediction and ground truth share no valid pixel")
    d = gt.values[valid]
    d_hat = pred.values[valid]
    ratio = np.maximum(d_hat / d, d / d_hat)
    deltas = [float(np.count_nonzero(ratio < THRESHOLD**k)) / count for k in (1, 2, 3)]
    # exactly rounded sums: reports do not depend on pixel order
    rel = math.fsum(np.abs(d_hat - d) / d) / count
    log10 = math.fsum(np.abs(np.log10(d_hat) - np.log10(d))) / count
    rms = math.sqrt(math.fsum((d_hat - d) ** 2) / count)
    gt_labels = depth_to_label(DepthMap(np.where(valid, gt.values, 1.0), valid), bins)
    pred_labels = depth_to_label(DepthMap(np.where(valid, pred.values, 1.0), valid), bins)
    hits = np.count_nonzero((gt_labels.labels == pred_labels.labels) & valid[:, 0])
    return MetricsReport(*deltas, rel, log10, rms, hits / count, count)


def confusion(pred_labels: LabelMap, gt_labels: LabelMap, m: int, coarsen: int = 1) -> np.ndarray:
    """Count matrix with rows = ground-truth bin, columns = predicted bin.

    ``coarsen`` merges groups of adjacent bins (e.g. 4 turns 200 bins into
    50) by summing square super-cells.
    """
    if pred_labels.labels.shape != gt_labels.labels.shape:
        raise ShapeError("label maps differ in shape")
    if coarsen < 1 or m % coarsen:
        raise DomainError(f"coarsening factor {coarsen} does not divide {m} bins")
    valid = pred_labels.mask & gt_labels.mask
    p = pred_labels.labels[valid]
    g = gt_labels.labels[valid]
    if p.size and (p.min() < 0 or g.min() < 0 or p.max() >= m or g.max() >= m):
        raise DomainError(f"labels outside [0, {m})")
    cm = np.bincount(g * m + p, minlength=m * m).reshape(m, m)
    if coarsen > 1:
        k = m // coarsen
        cm = cm.reshape(k, coarsen, k, coarsen).sum(axis=(1, 3))
    return cm


def band_mass(cm: np.ndarray, band: int) -> float:
    """Fraction of the total count with ``|pred - gt| <= band``."""
    if band < 0:
        raise DomainError("band must be >= 0")
    cm = np.asarray(cm)
    total = cm.sum()
    if total == 0:
        return 0.0
    i, j = np.indices(cm.shape)
    return float(cm[np.abs(i - j) <= band].sum() / total)

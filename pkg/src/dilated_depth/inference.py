"""Batched prediction and evaluation of a trained network."""

from __future__ import annotations

import numpy as np

from .depth_head import BinSpec, DepthMap, depth_to_label, infer_depth, softmax
from .metrics import MetricsReport, compute_metrics, confusion
from .network import Network


def predict_scores(net: Network, images: np.ndarray, batch_size: int = 8) -> np.ndarray:
    """Per-pixel bin probabilities in inference mode, shape (n, m, h, w)."""
    out = []
    for start in range(0, images.shape[0], batch_size):
        out.append(softmax(net.forward(images[start : start + batch_size], "inference")))
    return np.concatenate(out)


def predict_depth(net: Network, images: np.ndarray, bins: BinSpec, rule: str = "soft") -> DepthMap:
    return infer_depth(predict_scores(net, images), bins, rule)


def evaluate(
    net: Network, images: np.ndarray, gt: DepthMap, bins: BinSpec, rule: str = "soft"
) -> tuple[MetricsReport, np.ndarray]:
    """Metrics and bin confusion matrix of ``net`` on ``(images, gt)``."""
    pred = predict_depth(net, images, bins, rule)
    report = compute_metrics(pred, gt, bins)
    cm = confusion(depth_to_label(pred, bins), depth_to_label(gt, bins), bins.m)
    return report, cm


def evaluate_both(net: Network, images: np.ndarray, gt: DepthMap, bins: BinSpec) -> dict[str, MetricsReport]:
    """Soft and hard read-outs from one set of scores."""
    scores = predict_scores(net, images)
    return {rule: compute_metrics(infer_depth(scores, bins, rule), gt, bins) for rule in ("soft", "hard")}

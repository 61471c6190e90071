"""Desk-scale experiments on synthetic scenes.

``overfit_run`` trains the toy network on a small synthetic training split
and scores it on that split and on a held-out split, with both read-out
rules. The other helpers sweep one factor at a time: bin count, dilation,
skip connections.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .depth_head import BinSpec, DepthMap, depth_to_label, infer_depth, make_bins
from .inference import predict_scores
from .metrics import MetricsReport, compute_metrics, confusion
from .network import Network, toy_profile
from .training import HistoryRecord, SceneSpec, TrainConfig, generate_dataset, train


@dataclass(frozen=True)
class OverfitSetup:
    train_images: int = 20
    test_images: int = 10
    image_size: int = 32
    objects: int = 3
    noise: float = 0.02
    bins: int = 50
    d_min: float = 0.7
    d_max: float = 10.0
    steps: int = 600
    base_lr: float = 0.05
    sigma: float = 1 / 16
    dilation: bool = True
    skips: bool = True
    precision: str = "compact"

    @property
    def bin_spec(self) -> BinSpec:
        return make_bins(self.d_min, self.d_max, self.bins)

    def train_config(self, seed: int) -> TrainConfig:
        # paper schedule shape: constant for 60% of the run, then /10 every 20%
        return TrainConfig(
            iterations=self.steps,
            base_lr=self.base_lr,
            constant_phase=int(self.steps * 0.6),
            decay_period=max(1, int(self.steps * 0.2)),
            seed=seed,
            bins=self.bin_spec,
            network=toy_profile(self.bins, self.sigma, self.dilation, self.skips),
            precision=self.precision,
        )

    def scene_spec(self, seed: int) -> SceneSpec:
        return SceneSpec(self.image_size, self.image_size, self.objects, self.d_min, self.d_max, self.noise, seed)


def synthetic_splits(setup: OverfitSetup, seed: int):
    """Train and held-out splits; the held-out scenes never share a seed with training ones."""
    train_data = generate_dataset(setup.train_images, setup.scene_spec(2 * seed + 1))
    test_data = generate_dataset(setup.test_images, setup.scene_spec(2 * seed + 2))
    return train_data, test_data


@dataclass
class RunResult:
    setup: OverfitSetup
    seed: int
    net: Network
    history: list[HistoryRecord]
    train: dict[str, MetricsReport]
    test: dict[str, MetricsReport]
    train_confusion: np.ndarray

    @property
    def final_loss(self) -> float:
        return self.history[-1].loss


def score(net: Network, data: tuple[np.ndarray, DepthMap], bins: BinSpec):
    images, gt = data
    scores = predict_scores(net, images.astype(net.dtype))
    reports = {}
    preds = {}
    for rule in ("soft", "hard"):
        preds[rule] = infer_depth(scores, bins, rule)
        reports[rule] = compute_metrics(preds[rule], gt, bins)
    cm = confusion(depth_to_label(preds["hard"], bins), depth_to_label(gt, bins), bins.m)
    return reports, cm


def overfit_run(setup: OverfitSetup = OverfitSetup(), seed: int = 0, history_log=None) -> RunResult:
    train_data, test_data = synthetic_splits(setup, seed)
    net, history = train(train_data, setup.train_config(seed), history_log)
    bins = setup.bin_spec
    train_reports, cm = score(net, train_data, bins)
    test_reports, _ = score(net, test_data, bins)
    return RunResult(setup, seed, net, history, train_reports, test_reports, cm)


def bin_sweep(counts=(50, 200), setup: OverfitSetup = OverfitSetup(), seed: int = 0) -> dict[int, RunResult]:
    return {m: overfit_run(replace(setup, bins=m), seed) for m in counts}


def ablation(setup: OverfitSetup = OverfitSetup(), seed: int = 0) -> dict[str, RunResult]:
    """Full model against no-dilation and no-skip variants on the same data and seed."""
    return {
        "full": overfit_run(setup, seed),
        "no dilation": overfit_run(replace(setup, dilation=False), seed),
        "no skip connection": overfit_run(replace(setup, skips=False), seed),
    }

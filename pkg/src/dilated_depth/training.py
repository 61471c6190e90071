"""SGD with momentum, step learning-rate schedule, gradient accumulation,
synthetic RGB-D scenes and offline augmentation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, TextIO

import numpy as np

from .depth_head import BinSpec, DepthMap, depth_to_label, make_bins, multinomial_loss, softmax
from .errors import ConfigError, DomainError, TrainingError
from .network import Network, NetworkConfig, build_network, toy_profile
from .tensor import Precision

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class OptimizerState:
    learning_rate: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.0004
    velocity: dict[str, np.ndarray] = field(default_factory=dict)
    iteration: int = 0


def sgd_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: OptimizerState):
    """In-place update ``v <- mu v + (g + wd p)``, ``p <- p - lr v``.

    Every gradient is checked before any parameter moves, so a rejected
    step leaves the parameters untouched.
    """
    if not state.learning_rate > 0:
        raise ConfigError(f"learning rate must be positive, got {state.learning_rate}")
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise TrainingError(f"gradient for {name} has shape {g.shape}, parameter has {p.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in parameter {name}")
    for name, p in params.items():
        v = state.velocity.get(name)
        if v is None:
            v = state.velocity[name] = np.zeros_like(p)
        v *= state.momentum
        v += grads[name]
        if state.weight_decay:
            v += state.weight_decay * p
        p -= state.learning_rate * v
    state.iteration += 1
    return params, state


# ---------------------------------------------------------------------------
# configuration and schedule


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 2000
    base_lr: float = 0.001
    constant_phase: int = 1200
    decay_factor: float = 0.1
    decay_period: int = 400
    accumulation: int = 5
    batch_size: int = 3
    momentum: float = 0.9
    weight_decay: float = 0.0004
    seed: int = 0
    bins: BinSpec = field(default_factory=lambda: make_bins(0.7, 10.0, 200))
    network: NetworkConfig | None = None
    precision: str = "compact"

    def __post_init__(self):
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if not self.base_lr > 0:
            raise ConfigError("base learning rate must be positive")
        if self.accumulation < 1:
            raise ConfigError("accumulation span must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch size must be >= 1")
        if not 0 < self.decay_factor <= 1:
            raise ConfigError("decay factor must lie in (0, 1]")
        if self.decay_period < 1 or self.constant_phase < 0:
            raise ConfigError("schedule lengths must be positive")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)")
        Precision.parse(self.precision)
        if self.network is not None and self.network.bins != self.bins.m:
            raise ConfigError(f"network emits {self.network.bins} bins but bin spec has {self.bins.m}")

    def network_config(self) -> NetworkConfig:
        return self.network if self.network is not None else toy_profile(self.bins.m)


# 50k steps: 0.001 for 30k, then /10 every 10k
PAPER_SCHEDULE = TrainConfig(iterations=50_000, base_lr=0.001, constant_phase=30_000, decay_period=10_000)


def lr_at(iteration: int, config: TrainConfig) -> float:
    if iteration < 0:
        raise DomainError("iteration must be >= 0")
    if iteration < config.constant_phase:
        return config.base_lr
    drops = 1 + (iteration - config.constant_phase) // config.decay_period
    return config.base_lr * config.decay_factor**drops


# ---------------------------------------------------------------------------
# training loop


class HistoryRecord(NamedTuple):
    iteration: int
    lr: float
    loss: float

    def to_line(self) -> str:
        return f"{self.iteration} {self.lr!r} {self.loss!r}\n"

    @classmethod
    def from_line(cls, line: str) -> "HistoryRecord":
        it, lr, loss = line.split()
        return cls(int(it), float(lr), float(loss))


def batch_order(n: int, batch_size: int, count: int, seed: int) -> list[np.ndarray]:
    """``count`` mini-batches drawn from successive seeded permutations of ``range(n)``."""
    rng = np.random.default_rng([seed, 0x5EED])
    stream: list[int] = []
    needed = count * batch_size
    while len(stream) < needed:
        stream.extend(rng.permutation(n).tolist())
    return [np.array(stream[i * batch_size : (i + 1) * batch_size]) for i in range(count)]


def loss_and_grad(net: Network, images: np.ndarray, labels, mode: str = "train") -> float:
    """Forward, loss and backward for one mini-batch; gradients accumulate in ``net.grads``."""
    logits = net.forward(images, mode)
    scores = softmax(logits)
    loss, grad = multinomial_loss(scores, labels)
    if not np.isfinite(loss):
        raise TrainingError(f"non-finite loss {loss}")
    net.backward(grad)
    return loss


def train(
    dataset: tuple[np.ndarray, DepthMap],
    config: TrainConfig,
    history_log: TextIO | None = None,
    net: Network | None = None,
    callback: Callable[[HistoryRecord], None] | None = None,
) -> tuple[Network, list[HistoryRecord]]:
    """Train on ``(images, depth)`` and return the network and per-step history.

    Each effective step runs ``config.accumulation`` mini-batches, averages
    their gradients and applies one SGD update. A non-finite loss or
    gradient raises :class:`TrainingError` whose ``state`` attribute holds
    the parameters of the last good step.
    """
    images, depth = dataset
    n = images.shape[0]
    if n == 0:
        raise DomainError("empty dataset")
    if depth.shape[0] != n or depth.shape[2:] != images.shape[2:]:
        raise DomainError(f"images {images.shape} and depth {depth.shape} do not align")
    if net is None:
        net = build_network(config.network_config(), config.seed, config.precision)
    images = images.astype(net.dtype)
    labels = depth_to_label(depth, config.bins)
    state = OptimizerState(config.base_lr, config.momentum, config.weight_decay)
    span = config.accumulation
    batches = batch_order(n, config.batch_size, config.iterations * span, config.seed)
    history: list[HistoryRecord] = []
    for step in range(config.iterations):
        state.learning_rate = lr_at(step, config)
        net.zero_grad()
        # running statistics move during the forward pass; keep the pre-step values
        buffers = {name: value.copy() for name, value in net.buffers.items()}
        total = 0.0
        try:
            for k in range(span):
                idx = batches[step * span + k]
                total += loss_and_grad(net, images[idx], _take_labels(labels, idx))
            for g in net.grads.values():
                g /= span
            sgd_step(net.params, net.grads, state)
        except TrainingError as exc:
            exc.state = {**net.state_dict(), **buffers}
            exc.iteration = step
            raise
        record = HistoryRecord(step, state.learning_rate, total / span)
        history.append(record)
        if history_log is not None:
            history_log.write(record.to_line())
            history_log.flush()
        if callback is not None:
            callback(record)
        if step % 100 == 0:
            log.debug("step %d lr %g loss %.5f", step, record.lr, record.loss)
    return net, history


def _take_labels(labels, idx):
    return type(labels)(labels.labels[idx], labels.mask[idx])


# ---------------------------------------------------------------------------
# synthetic scenes


@dataclass(frozen=True)
class SceneSpec:
    height: int = 32
    width: int = 32
    objects: int = 3
    d_min: float = 0.7
    d_max: float = 10.0
    noise: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ConfigError("scene size must be positive")
        if self.objects < 0:
            raise ConfigError("object count must be >= 0")
        if not 0 < self.d_min < self.d_max:
            raise ConfigError("scene depth range needs 0 < d_min < d_max")
        if self.noise < 0:
            raise ConfigError("noise level must be >= 0")


def _albedo(rng) -> np.ndarray:
    # random chroma, fixed mean so brightness carries the depth cue
    a = rng.uniform(0.2, 1.0, size=3)
    return a * (0.6 / a.mean())


def generate_scene(spec: SceneSpec) -> tuple[np.ndarray, DepthMap]:
    """Axis-aligned rectangles in front of a fronto-parallel background.

    Pixel colour is the surface albedo times ``sqrt(d_min * d_max) / depth``
    plus Gaussian texture noise. Returns an image of shape (1, 3, h, w) and
    an exact depth map.
    """
    rng = np.random.default_rng(spec.seed)
    h, w = spec.height, spec.width
    lo, hi = np.log(spec.d_min), np.log(spec.d_max)
    depth = np.full((h, w), np.exp(rng.uniform(lo + 0.6 * (hi - lo), hi)))
    albedo = np.empty((3, h, w))
    albedo[:] = _albedo(rng)[:, None, None]
    rects = []
    for _ in range(spec.objects):
        rh = int(rng.integers(max(1, h // 8), max(2, h // 2) + 1))
        rw = int(rng.integers(max(1, w // 8), max(2, w // 2) + 1))
        top = int(rng.integers(0, h - rh + 1))
        left = int(rng.integers(0, w - rw + 1))
        d = float(np.exp(rng.uniform(lo, hi)))
        rects.append((d, top, left, rh, rw, _albedo(rng)))
    for d, top, left, rh, rw, a in sorted(rects, key=lambda r: -r[0]):
        depth[top : top + rh, left : left + rw] = d
        albedo[:, top : top + rh, left : left + rw] = a[:, None, None]
    depth = np.clip(depth, spec.d_min, spec.d_max)
    image = albedo * (np.sqrt(spec.d_min * spec.d_max) / depth)[None]
    if spec.noise:
        image = image + spec.noise * rng.standard_normal(image.shape)
    return image[None], DepthMap(depth[None, None], np.ones((1, 1, h, w), bool))


def generate_dataset(count: int, spec: SceneSpec) -> tuple[np.ndarray, DepthMap]:
    """``count`` scenes whose seeds derive from ``spec.seed``."""
    if count < 1:
        raise DomainError("dataset needs at least one scene")
    seeds = np.random.SeedSequence(spec.seed).generate_state(count)
    images, depths = [], []
    for s in seeds:
        image, depth = generate_scene(replace(spec, seed=int(s)))
        images.append(image)
        depths.append(depth.values)
    values = np.concatenate(depths)
    return np.concatenate(images), DepthMap(values, np.ones(values.shape, bool))


# ---------------------------------------------------------------------------
# augmentation


def hflip(pair):
    image, depth = pair
    return image[..., ::-1].copy(), DepthMap(depth.values[..., ::-1], depth.mask[..., ::-1])


def color_scale(pair, scale):
    image, depth = pair
    scale = np.asarray(scale, dtype=image.dtype).reshape(1, -1, 1, 1)
    return image * scale, DepthMap(depth.values.copy(), depth.mask.copy())


def crop(pair, top: int, left: int, height: int, width: int):
    image, depth = pair
    h, w = image.shape[2:]
    if top < 0 or left < 0 or height < 1 or width < 1 or top + height > h or left + width > w:
        raise DomainError(f"crop ({top}, {left}, {height}, {width}) exceeds a {h}x{w} image")
    ys, xs = slice(top, top + height), slice(left, left + width)
    return image[..., ys, xs].copy(), DepthMap(depth.values[..., ys, xs], depth.mask[..., ys, xs])


def augment(pair, ops):
    """Apply ``ops`` in order: ``("flip",)``, ``("color", scale)``, ``("crop", t, l, h, w)``."""
    for op in ops:
        name, *args = op
        if name == "flip":
            pair = hflip(pair)
        elif name == "color":
            pair = color_scale(pair, *args)
        elif name == "crop":
            pair = crop(pair, *args)
        else:
            raise DomainError(f"unknown augmentation {name!r}")
    return pair


def augment_dataset(dataset, seed: int = 0, color_jitter: float = 0.1):
    """Offline 4x expansion: original, flipped, and a colour-jittered copy of each."""
    rng = np.random.default_rng(seed)
    images, depth = dataset
    out_images, out_depths, out_masks = [images], [depth.values], [depth.mask]
    flipped = hflip(dataset)
    out_images.append(flipped[0])
    out_depths.append(flipped[1].values)
    out_masks.append(flipped[1].mask)
    for source in (dataset, flipped):
        scales = rng.uniform(1 - color_jitter, 1 + color_jitter, size=(images.shape[0], 3, 1, 1))
        out_images.append(source[0] * scales)
        out_depths.append(source[1].values)
        out_masks.append(source[1].mask)
    return np.concatenate(out_images), DepthMap(np.concatenate(out_depths), np.concatenate(out_masks))

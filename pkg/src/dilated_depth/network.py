"""Residual blocks, the skip-connected dilated network and receptive fields.

A network is described by a :class:`NetworkConfig`, an ordered list of
:class:`LayerConfig` records. Any layer may tag its output with a skip
``label``; a ``concat_skip`` layer later concatenates the tagged maps to the
running feature map after resampling them to its resolution.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields, replace
from fractions import Fraction

import numpy as np

from . import conv_ops as ops
from .errors import ConfigError, ShapeError
from .tensor import Precision

LAYER_KINDS = ("conv", "batchnorm", "relu", "maxpool", "residual_block", "concat_skip", "deconv")


@dataclass(frozen=True)
class LayerConfig:
    kind: str
    name: str = ""
    out_channels: int = 0
    radius: int = 1
    dilation: int = 1
    stride: int = 1
    window: int = 2
    repeat: int = 1
    factor: int = 4
    projection: bool | None = None
    learnable: bool = True
    label: str | None = None
    sources: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")


@dataclass(frozen=True)
class NetworkConfig:
    layers: tuple[LayerConfig, ...]
    bins: int
    sigma: float = 1 / 16
    dilation: bool = True
    skips: bool = True
    in_channels: int = 3
    profile: str = "custom"

    def describe(self) -> str:
        """Canonical text form; stable across runs and used for digests."""
        lines = [
            f"profile={self.profile}",
            f"bins={self.bins}",
            f"sigma={self.sigma!r}",
            f"dilation={self.dilation}",
            f"skips={self.skips}",
            f"in_channels={self.in_channels}",
        ]
        for layer in self.layers:
            parts = [f"{f.name}={getattr(layer, f.name)!r}" for f in fields(layer)]
            lines.append("layer " + " ".join(parts))
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.describe().encode()).hexdigest()


def toy_profile(
    bins: int = 200,
    sigma: float = 1 / 16,
    dilation: bool = True,
    skips: bool = True,
) -> NetworkConfig:
    """Reduced-scale template: 7x7/2 stem, 2x2/2 pool, four residual stages.

    Stage widths are ``{16, 32, 64, 64} * 16 * sigma`` and each stage repeats
    its block ``2 * max(1, round(16 * sigma))`` times. The last two stages are
    the downsampling stages of the backbone; with ``dilation`` they keep
    stride 1 and use dilation 2 and 4 instead, otherwise they stride by 2 and
    a fixed bilinear upsampling restores the resolution before the learnable
    stride-4 deconvolution. Skip labels L1..L6 tag the stem output, the first
    two stage outputs and the first-block and final outputs of stage 3 plus
    the first-block output of stage 4.
    """
    if not 0 < sigma <= 1:
        raise ConfigError(f"sigma must lie in (0, 1], got {sigma}")
    if bins < 2:
        raise ConfigError(f"bin count must be >= 2, got {bins}")
    width = lambda base: max(1, int(round(base * 16 * sigma)))  # noqa: E731
    repeat = 2 * max(1, int(round(16 * sigma)))
    stem = width(16)
    w1, w2, w3, w4 = width(16), width(32), width(64), width(64)

    def down_stage(out, dil, first_label, last_label):
        # first block replaces a stride-2 stage: always a projection shortcut
        first = LayerConfig(
            "residual_block",
            out_channels=out,
            stride=1 if dilation else 2,
            dilation=dil if dilation else 1,
            projection=True,
            label=first_label,
        )
        rest = LayerConfig(
            "residual_block",
            out_channels=out,
            dilation=dil if dilation else 1,
            repeat=repeat - 1,
            label=last_label,
        )
        return [first, rest] if repeat > 1 else [replace(first, label=last_label or first_label)]

    layers = [
        LayerConfig("conv", name="stem.conv", out_channels=stem, radius=3, stride=2),
        LayerConfig("batchnorm", name="stem.bn"),
        LayerConfig("relu", name="stem.relu", label="L1"),
        LayerConfig("maxpool", name="pool", window=2, stride=2),
        LayerConfig("residual_block", name="stage1", out_channels=w1, repeat=repeat, label="L2"),
        LayerConfig("residual_block", name="stage2", out_channels=w2, repeat=repeat, label="L3"),
    ]
    s3 = down_stage(w3, 2, "L4", "L5")
    s4 = down_stage(w4, 4, "L6", None)
    for i, layer in enumerate(s3):
        layers.append(replace(layer, name=f"stage3.{i}"))
    for i, layer in enumerate(s4):
        layers.append(replace(layer, name=f"stage4.{i}"))
    if skips:
        layers.append(LayerConfig("concat_skip", name="skip", sources=("L1", "L2", "L3", "L4", "L5", "L6")))
    layers.append(LayerConfig("conv", name="classifier", out_channels=bins, radius=0))
    if not dilation:
        layers.append(LayerConfig("deconv", name="restore", factor=4, learnable=False))
    layers.append(LayerConfig("deconv", name="upsample", factor=4))
    return NetworkConfig(tuple(layers), bins=bins, sigma=sigma, dilation=dilation, skips=skips, profile="toy")


# ---------------------------------------------------------------------------
# static analysis


@dataclass
class LayerInfo:
    name: str
    kind: str
    in_channels: int
    out_channels: int
    jump: Fraction  # input pixels per output pixel after this layer
    receptive_field: int
    parameters: int
    dilation: int = 1
    resample: dict = field(default_factory=dict)


def _conv_rf(rf: int, jump: Fraction, side: int, dilation: int) -> int:
    grown = rf + (side - 1) * dilation * jump
    if grown.denominator != 1:
        raise ConfigError("receptive field is not an integer; fractional feature-map stride")
    return int(grown)


def _bn_params(channels: int) -> int:
    return 2 * channels


def _block_params(cin: int, cout: int, projection: bool) -> int:
    n = ops.ConvSpec(1, in_channels=cin, out_channels=cout).parameter_count + _bn_params(cout)
    n += ops.ConvSpec(1, in_channels=cout, out_channels=cout).parameter_count + _bn_params(cout)
    if projection:
        n += ops.ConvSpec(0, in_channels=cin, out_channels=cout).parameter_count + _bn_params(cout)
    return n


def _needs_projection(cin: int, cout: int, stride: int) -> bool:
    return cin != cout or stride != 1


def analyze(config: NetworkConfig) -> list[LayerInfo]:
    """Validate ``config`` and return per-layer static information.

    Receptive fields follow ``RF_out = RF_in + (side - 1) * dilation * jump``
    where ``jump`` is the product of preceding strides; a concatenation takes
    the largest receptive field among its (resampled) inputs.
    """
    channels = config.in_channels
    jump = Fraction(1)
    rf = 1
    labels: dict[str, tuple[int, Fraction, int]] = {}
    infos: list[LayerInfo] = []
    for index, layer in enumerate(config.layers):
        name = layer.name or f"{index:02d}.{layer.kind}"
        where = f"layer {index} ({name})"
        cin = channels
        params = 0
        resample = {}
        if layer.kind == "conv":
            if layer.out_channels < 1:
                raise ConfigError(f"{where}: conv needs out_channels >= 1")
            spec = ops.ConvSpec(layer.radius, layer.dilation, layer.stride, None, cin, layer.out_channels)
            rf = _conv_rf(rf, jump, spec.side, spec.dilation)
            jump *= layer.stride
            channels = layer.out_channels
            params = spec.parameter_count
        elif layer.kind == "batchnorm":
            params = _bn_params(cin)
        elif layer.kind == "relu":
            pass
        elif layer.kind == "maxpool":
            if layer.window < 1 or layer.stride < 1:
                raise ConfigError(f"{where}: pool window and stride must be >= 1")
            rf = _conv_rf(rf, jump, layer.window, 1)
            jump *= layer.stride
        elif layer.kind == "residual_block":
            if layer.out_channels < 1 or layer.repeat < 1:
                raise ConfigError(f"{where}: residual block needs out_channels >= 1 and repeat >= 1")
            for b in range(layer.repeat):
                stride = layer.stride if b == 0 else 1
                needed = _needs_projection(channels, layer.out_channels, stride)
                projection = needed if (b > 0 or layer.projection is None) else layer.projection
                if needed and not projection:
                    raise ConfigError(f"{where}: shortcut shape changes but projection disabled")
                params += _block_params(channels, layer.out_channels, projection)
                rf = _conv_rf(rf, jump, 3, layer.dilation)
                jump *= stride
                rf = _conv_rf(rf, jump, 3, layer.dilation)
                channels = layer.out_channels
        elif layer.kind == "concat_skip":
            if not layer.sources:
                raise ConfigError(f"{where}: concat_skip lists no sources")
            for src in layer.sources:
                if src not in labels:
                    raise ConfigError(f"{where}: skip source {src!r} is not declared by an earlier layer")
                src_channels, src_jump, src_rf = labels[src]
                ratio = jump / src_jump
                if ratio > 1:
                    if ratio.denominator != 1:
                        raise ConfigError(f"{where}: cannot pool {src} by non-integer ratio {ratio}")
                    resample[src] = ("pool", int(ratio))
                    src_rf = _conv_rf(src_rf, src_jump, int(ratio), 1)
                elif ratio < 1:
                    up = 1 / ratio
                    if up.denominator != 1:
                        raise ConfigError(f"{where}: cannot upsample {src} by non-integer ratio {up}")
                    resample[src] = ("upsample", int(up))
                    side = ops.deconv_kernel_side(int(up))
                    src_rf = _conv_rf(src_rf, src_jump, -(-side // int(up)), 1)
                else:
                    resample[src] = ("identity", 1)
                rf = max(rf, src_rf)
                channels += src_channels
        elif layer.kind == "deconv":
            if layer.factor < 2:
                raise ConfigError(f"{where}: deconv factor must be >= 2")
            side = ops.deconv_kernel_side(layer.factor)
            rf = _conv_rf(rf, jump, -(-side // layer.factor), 1)
            jump /= layer.factor
            if layer.learnable:
                params = channels * side * side + channels
        if layer.label is not None:
            if layer.label in labels:
                raise ConfigError(f"{where}: skip label {layer.label!r} declared twice")
            labels[layer.label] = (channels, jump, rf)
        infos.append(
            LayerInfo(name, layer.kind, cin, channels, jump, rf, params, layer.dilation, resample)
        )
    if not infos:
        raise ConfigError("network has no layers")
    if channels != config.bins:
        raise ConfigError(f"final layer emits {channels} channels, expected {config.bins} bins")
    return infos


def receptive_field(config: NetworkConfig) -> list[tuple[str, int]]:
    return [(info.name, info.receptive_field) for info in analyze(config)]


def pre_upsampling_receptive_field(config: NetworkConfig) -> int:
    """Receptive field of the last layer before the trailing deconvolutions."""
    infos = analyze(config)
    k = len(infos)
    while k > 1 and infos[k - 1].kind == "deconv":
        k -= 1
    return infos[k - 1].receptive_field


def parameter_count(config: NetworkConfig) -> int:
    return sum(info.parameters for info in analyze(config))


def total_stride(config: NetworkConfig) -> int:
    worst = max(info.jump for info in analyze(config))
    return int(np.ceil(float(worst)))


# ---------------------------------------------------------------------------
# layers


class Layer:
    kind = ""

    def __init__(self, name: str):
        self.name = name
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.label: str | None = None

    def named_parameters(self, prefix: str = ""):
        for key, value in self.params.items():
            yield prefix + self.name + "." + key, value, self.grads[key]

    def named_buffers(self, prefix: str = ""):
        return iter(())

    def zero_grad(self):
        for g in self.grads.values():
            g[...] = 0

    def _register(self, key: str, value: np.ndarray):
        self.params[key] = value
        self.grads[key] = np.zeros_like(value)


class Conv(Layer):
    kind = "conv"

    def __init__(self, name, spec: ops.ConvSpec, rng, dtype):
        super().__init__(name)
        self.spec = spec
        kernel = ops.ConvKernel.he_normal(spec, rng, dtype)
        self._register("weight", kernel.weights)
        self._register("bias", kernel.bias)
        self._cache = None

    @property
    def kernel(self) -> ops.ConvKernel:
        return ops.ConvKernel(self.params["weight"], self.params["bias"])

    def forward(self, x, mode):
        out, self._cache = ops.conv2d_dilated_forward(x, self.kernel, self.spec)
        return out

    def backward(self, grad):
        gx, gw, gb = ops.conv2d_dilated_backward(grad, self._cache)
        self.grads["weight"] += gw
        self.grads["bias"] += gb
        return gx


class BatchNorm(Layer):
    kind = "batchnorm"

    def __init__(self, name, channels, dtype):
        super().__init__(name)
        self.state = ops.BatchNormState.identity(channels, dtype)
        self._register("gamma", self.state.gamma)
        self._register("beta", self.state.beta)
        self._cache = None

    def named_buffers(self, prefix=""):
        yield prefix + self.name + ".running_mean", self.state.running_mean
        yield prefix + self.name + ".running_var", self.state.running_var

    def forward(self, x, mode):
        out, self._cache = ops.batch_norm_forward(x, self.state, mode)
        return out

    def backward(self, grad):
        gx, gg, gb = ops.batch_norm_backward(grad, self._cache)
        self.grads["gamma"] += gg
        self.grads["beta"] += gb
        return gx


class ReLU(Layer):
    kind = "relu"

    def __init__(self, name):
        super().__init__(name)
        self._mask = None

    def forward(self, x, mode):
        out, self._mask = ops.relu_forward(x)
        return out

    def backward(self, grad):
        return ops.relu_backward(grad, self._mask)


class MaxPool(Layer):
    kind = "maxpool"

    def __init__(self, name, window, stride):
        super().__init__(name)
        self.window = window
        self.stride = stride
        self._cache = None

    def forward(self, x, mode):
        out, argmax = ops.max_pool(x, self.window, self.stride)
        self._cache = (argmax, x.shape)
        return out

    def backward(self, grad):
        argmax, shape = self._cache
        return ops.max_pool_backward(grad, argmax, shape)


class Deconv(Layer):
    """Channel-wise transposed convolution, bilinear-initialized."""

    kind = "deconv"

    def __init__(self, name, channels, factor, dtype, learnable=True):
        super().__init__(name)
        self.factor = factor
        self.learnable = learnable
        kernel = ops.bilinear_deconv_kernel(channels, factor, dtype)
        if learnable:
            self._register("weight", kernel.weights)
            self._register("bias", kernel.bias)
        else:
            self._fixed = kernel
        self._cache = None

    @property
    def kernel(self) -> ops.ConvKernel:
        if self.learnable:
            return ops.ConvKernel(self.params["weight"], self.params["bias"])
        return self._fixed

    def forward(self, x, mode):
        out, self._cache = ops.deconv_upsample_forward(x, self.factor, self.kernel)
        return out

    def backward(self, grad):
        gx, gw, gb = ops.deconv_upsample_backward(grad, self._cache)
        if self.learnable:
            self.grads["weight"] += gw
            self.grads["bias"] += gb
        return gx


class Composite(Layer):
    """A layer made of named sub-layers; parameters are registered with a prefix."""

    def __init__(self, name):
        super().__init__(name)
        self.children: list[Layer] = []

    def named_parameters(self, prefix=""):
        for child in self.children:
            yield from child.named_parameters(prefix + self.name + ".")

    def named_buffers(self, prefix=""):
        for child in self.children:
            yield from child.named_buffers(prefix + self.name + ".")

    def zero_grad(self):
        for child in self.children:
            child.zero_grad()


class ResidualBlock(Composite):
    """``relu(shortcut(x) + bn(conv(relu(bn(conv(x))))))`` with 3x3 convolutions."""

    kind = "residual_block"

    def __init__(self, name, cin, cout, stride, dilation, projection, rng, dtype):
        super().__init__(name)
        if _needs_projection(cin, cout, stride) and not projection:
            raise ConfigError(f"{name}: shortcut shape changes ({cin}->{cout}, stride {stride}) without projection")
        self.conv1 = Conv("conv1", ops.ConvSpec(1, dilation, stride, None, cin, cout), rng, dtype)
        self.bn1 = BatchNorm("bn1", cout, dtype)
        self.relu1 = ReLU("relu1")
        self.conv2 = Conv("conv2", ops.ConvSpec(1, dilation, 1, None, cout, cout), rng, dtype)
        self.bn2 = BatchNorm("bn2", cout, dtype)
        self.children = [self.conv1, self.bn1, self.conv2, self.bn2]
        self.shortcut = []
        if projection:
            proj = Conv("proj", ops.ConvSpec(0, 1, stride, 0, cin, cout), rng, dtype)
            proj_bn = BatchNorm("proj_bn", cout, dtype)
            self.shortcut = [proj, proj_bn]
            self.children += self.shortcut
        self.relu_out = ReLU("relu_out")

    def forward(self, x, mode):
        y = x
        for layer in (self.conv1, self.bn1, self.relu1, self.conv2, self.bn2):
            y = layer.forward(y, mode)
        s = x
        for layer in self.shortcut:
            s = layer.forward(s, mode)
        if s.shape != y.shape:
            raise ShapeError(f"{self.name}: shortcut {s.shape} and branch {y.shape} disagree")
        return self.relu_out.forward(s + y, mode)

    def backward(self, grad):
        grad = self.relu_out.backward(grad)
        gy = grad
        for layer in (self.bn2, self.conv2, self.relu1, self.bn1, self.conv1):
            gy = layer.backward(gy)
        gs = grad
        for layer in reversed(self.shortcut):
            gs = layer.backward(gs)
        return gy + gs


class ResidualStage(Composite):
    kind = "residual_block"

    def __init__(self, name, cin, layer: LayerConfig, rng, dtype):
        super().__init__(name)
        channels = cin
        for b in range(layer.repeat):
            stride = layer.stride if b == 0 else 1
            needed = _needs_projection(channels, layer.out_channels, stride)
            projection = needed if (b > 0 or layer.projection is None) else layer.projection
            block = ResidualBlock(
                f"block{b}", channels, layer.out_channels, stride, layer.dilation, projection, rng, dtype
            )
            self.children.append(block)
            channels = layer.out_channels

    def forward(self, x, mode):
        for block in self.children:
            x = block.forward(x, mode)
        return x

    def backward(self, grad):
        for block in reversed(self.children):
            grad = block.backward(grad)
        return grad


class ConcatSkip(Layer):
    kind = "concat_skip"

    def __init__(self, name, sources, resample, channels_of, dtype):
        super().__init__(name)
        self.sources = tuple(sources)
        self.resamplers = {}
        for src in self.sources:
            how, k = resample[src]
            if how == "pool":
                self.resamplers[src] = MaxPool(f"pool_{src}", k, k)
            elif how == "upsample":
                self.resamplers[src] = Deconv(f"up_{src}", channels_of[src], k, dtype, learnable=False)
            else:
                self.resamplers[src] = None
        self._splits = None

    def forward(self, x, skips, mode):
        parts = [x]
        for src in self.sources:
            r = self.resamplers[src]
            t = skips[src] if r is None else r.forward(skips[src], mode)
            if t.shape[0] != x.shape[0] or t.shape[2:] != x.shape[2:]:
                raise ShapeError(f"{self.name}: skip {src} resampled to {t.shape}, feature map is {x.shape}")
            parts.append(t)
        self._splits = np.cumsum([p.shape[1] for p in parts])[:-1]
        return np.concatenate(parts, axis=1)

    def backward(self, grad):
        pieces = np.split(grad, self._splits, axis=1)
        src_grads = []
        for src, g in zip(self.sources, pieces[1:]):
            r = self.resamplers[src]
            src_grads.append(g if r is None else r.backward(np.ascontiguousarray(g)))
        return np.ascontiguousarray(pieces[0]), src_grads


class Network:
    """An instantiated network with a flat parameter registry."""

    def __init__(self, config: NetworkConfig, layers: list[Layer], dtype):
        self.config = config
        self.layers = layers
        self.dtype = np.dtype(dtype)
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        for layer in layers:
            for name, value, grad in layer.named_parameters():
                if name in self.params:
                    raise ConfigError(f"duplicate parameter name {name}")
                self.params[name] = value
                self.grads[name] = grad
        self.buffers: dict[str, np.ndarray] = {}
        for layer in layers:
            for name, value in layer.named_buffers():
                self.buffers[name] = value
        self.stride = total_stride(config)
        self.skips: dict[str, np.ndarray] = {}
        self.trace: list[tuple[str, tuple]] = []

    @property
    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def forward(self, image: np.ndarray, mode: str = "inference") -> np.ndarray:
        image = np.asarray(image)
        if image.ndim != 4 or image.shape[1] != self.config.in_channels:
            raise ShapeError(f"expected an (n, {self.config.in_channels}, h, w) image, got {image.shape}")
        h, w = image.shape[2:]
        if h % self.stride or w % self.stride:
            raise ShapeError(f"image size {h}x{w} is not divisible by the network stride {self.stride}")
        x = image.astype(self.dtype, copy=False)
        self.skips = {}
        self.trace = []
        for layer in self.layers:
            if isinstance(layer, ConcatSkip):
                x = layer.forward(x, self.skips, mode)
            else:
                x = layer.forward(x, mode)
            if layer.label is not None:
                self.skips[layer.label] = x
            self.trace.append((layer.name, x.shape))
        return x

    def backward(self, grad_logits: np.ndarray) -> np.ndarray:
        """Accumulate parameter gradients; return the gradient w.r.t. the image."""
        grad = np.asarray(grad_logits, dtype=self.dtype)
        pending: dict[str, np.ndarray] = {}
        for layer in reversed(self.layers):
            if layer.label is not None and layer.label in pending:
                grad = grad + pending.pop(layer.label)
            if isinstance(layer, ConcatSkip):
                grad, src_grads = layer.backward(grad)
                for src, g in zip(layer.sources, src_grads):
                    pending[src] = pending[src] + g if src in pending else g
            else:
                grad = layer.backward(grad)
        return grad

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: value.copy() for name, value in self.params.items()}
        state.update({name: value.copy() for name, value in self.buffers.items()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        expected = set(self.params) | set(self.buffers)
        missing = expected - set(state)
        extra = set(state) - expected
        if missing or extra:
            raise ConfigError(f"state mismatch: missing {sorted(missing)[:3]}, unexpected {sorted(extra)[:3]}")
        for name, target in list(self.params.items()) + list(self.buffers.items()):
            value = np.asarray(state[name])
            if value.shape != target.shape:
                raise ShapeError(f"{name}: stored shape {value.shape}, network expects {target.shape}")
            target[...] = value


def build_network(
    config: NetworkConfig, seed: int = 0, precision: Precision | str = Precision.STANDARD
) -> Network:
    infos = analyze(config)
    dtype = Precision.parse(precision).dtype
    rng = np.random.default_rng(seed)
    channels = config.in_channels
    channels_of: dict[str, int] = {}
    layers: list[Layer] = []
    for layer, info in zip(config.layers, infos):
        if layer.kind == "conv":
            spec = ops.ConvSpec(layer.radius, layer.dilation, layer.stride, None, channels, layer.out_channels)
            built = Conv(info.name, spec, rng, dtype)
        elif layer.kind == "batchnorm":
            built = BatchNorm(info.name, channels, dtype)
        elif layer.kind == "relu":
            built = ReLU(info.name)
        elif layer.kind == "maxpool":
            built = MaxPool(info.name, layer.window, layer.stride)
        elif layer.kind == "residual_block":
            built = ResidualStage(info.name, channels, layer, rng, dtype)
        elif layer.kind == "concat_skip":
            built = ConcatSkip(info.name, layer.sources, info.resample, channels_of, dtype)
        else:
            built = Deconv(info.name, channels, layer.factor, dtype, learnable=layer.learnable)
        built.label = layer.label
        channels = info.out_channels
        if layer.label is not None:
            channels_of[layer.label] = channels
        layers.append(built)
    return Network(config, layers, dtype)


def forward(net: Network, image: np.ndarray, mode: str = "inference") -> np.ndarray:
    return net.forward(image, mode)


def residual_block_forward(x: np.ndarray, block: ResidualBlock, mode: str = "train") -> np.ndarray:
    return block.forward(x, mode)

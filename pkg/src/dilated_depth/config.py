"""Plain-text ``key = value`` experiment configuration."""

from __future__ import annotations

import os
from dataclasses import dataclass, fields, replace
from fractions import Fraction
from pathlib import Path

from .depth_head import BinSpec, make_bins
from .errors import ConfigError, DepthError
from .network import NetworkConfig, toy_profile
from .tensor import Precision
from .training import SceneSpec, TrainConfig


def _parse_bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("on", "true", "yes", "1"):
        return True
    if value in ("off", "false", "no", "0"):
        return False
    raise ValueError(f"expected on/off, got {text!r}")


def _parse_float(text: str) -> float:
    # accepts fractions such as 1/16
    return float(Fraction(text.strip()))


@dataclass(frozen=True)
class ExperimentConfig:
    profile: str = "toy"
    sigma: float = 1 / 16
    dilation: bool = True
    skips: bool = True
    d_min: float = 0.7
    d_max: float = 10.0
    bins: int = 200
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
    precision: str = "compact"
    dataset: str = "synthetic"
    scenes: int = 20
    test_scenes: int = 10
    image_size: int = 32
    objects: int = 3
    noise: float = 0.02
    scene_seed: int = 1
    augment: bool = False
    inference: str = "soft"
    output: str = ""

    def __post_init__(self):
        if self.profile != "toy":
            raise ConfigError(f"unknown network profile {self.profile!r}; only 'toy' is defined")
        if self.inference not in ("soft", "hard"):
            raise ConfigError(f"inference must be 'soft' or 'hard', got {self.inference!r}")
        try:
            Precision.parse(self.precision)
            self.bin_spec
            self.train_config()
            self.scene_spec()
        except DepthError as exc:
            raise ConfigError(str(exc)) from None
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def bin_spec(self) -> BinSpec:
        return make_bins(self.d_min, self.d_max, self.bins)

    def network_config(self) -> NetworkConfig:
        return toy_profile(self.bins, self.sigma, self.dilation, self.skips)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            iterations=self.iterations,
            base_lr=self.base_lr,
            constant_phase=self.constant_phase,
            decay_factor=self.decay_factor,
            decay_period=self.decay_period,
            accumulation=self.accumulation,
            batch_size=self.batch_size,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            seed=self.seed,
            bins=self.bin_spec,
            network=self.network_config(),
            precision=self.precision,
        )

    def scene_spec(self, split: str = "train") -> SceneSpec:
        seed = self.scene_seed if split == "train" else self.scene_seed + 1_000_003
        return SceneSpec(self.image_size, self.image_size, self.objects, self.d_min, self.d_max, self.noise, seed)

    @property
    def synthetic(self) -> bool:
        return self.dataset == "synthetic"

    def with_env(self) -> "ExperimentConfig":
        """Apply the RDT_PRECISION override."""
        if "RDT_PRECISION" in os.environ:
            try:
                precision = Precision.parse(os.environ["RDT_PRECISION"]).value
            except ValueError as exc:
                raise ConfigError(f"RDT_PRECISION: {exc}") from None
            return replace(self, precision=precision)
        return self

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                value = "on" if value else "off"
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{f.name} = {value}\n")
        return "".join(lines)

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "ExperimentConfig":
        kinds = {f.name: f.type for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if not sep:
                raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            if key not in kinds:
                raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
            if key in values:
                raise ConfigError(f"{source}:{lineno}: key {key!r} set twice")
            kind = kinds[key]
            try:
                if kind == "bool":
                    values[key] = _parse_bool(value)
                elif kind == "int":
                    values[key] = int(value)
                elif kind == "float":
                    values[key] = _parse_float(value)
                else:
                    values[key] = value
            except (ValueError, ZeroDivisionError) as exc:
                raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from None
        return cls(**values)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise OSError(exc.errno, f"cannot read config: {exc.strerror}", str(path)) from exc
        return cls.from_text(text, str(path))

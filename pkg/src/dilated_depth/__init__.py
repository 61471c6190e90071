"""Dilated residual CNN for single-image depth estimation, in numpy.

Depth is predicted as a classification over log-spaced bins and read out
either by soft weight sum (``exp`` of the probability-weighted mean log
depth) or by taking the most probable bin.
"""

from .conv_ops import (
    BatchNormState,
    ConvKernel,
    ConvSpec,
    batch_norm,
    bilinear_deconv_kernel,
    conv2d_dilated,
    conv2d_dilated_backward,
    conv2d_dilated_forward,
    deconv_upsample,
    max_pool,
    max_pool_backward,
)
from .depth_head import (
    BinSpec,
    DepthMap,
    LabelMap,
    depth_to_label,
    hard_threshold,
    make_bins,
    multinomial_loss,
    soft_weight_sum,
    softmax,
)
from .errors import (
    ConfigError,
    DepthError,
    DigestError,
    DomainError,
    FormatError,
    ParseError,
    ShapeError,
    SizeError,
    TrainingError,
)
from .metrics import MetricsReport, band_mass, compute_metrics, confusion
from .network import LayerConfig, Network, NetworkConfig, build_network, receptive_field, toy_profile
from .tensor import Precision, add, concat_channels, tensor_fill
from .training import SceneSpec, TrainConfig, generate_scene, lr_at, sgd_step, train

__version__ = "0.1.0"

__all__ = [
    "BatchNormState",
    "BinSpec",
    "ConfigError",
    "ConvKernel",
    "ConvSpec",
    "DepthError",
    "DepthMap",
    "DigestError",
    "DomainError",
    "FormatError",
    "LabelMap",
    "LayerConfig",
    "MetricsReport",
    "Network",
    "NetworkConfig",
    "ParseError",
    "Precision",
    "SceneSpec",
    "ShapeError",
    "SizeError",
    "TrainConfig",
    "TrainingError",
    "add",
    "band_mass",
    "batch_norm",
    "bilinear_deconv_kernel",
    "build_network",
    "compute_metrics",
    "concat_channels",
    "confusion",
    "conv2d_dilated",
    "conv2d_dilated_backward",
    "conv2d_dilated_forward",
    "deconv_upsample",
    "depth_to_label",
    "generate_scene",
    "hard_threshold",
    "lr_at",
    "make_bins",
    "max_pool",
    "max_pool_backward",
    "multinomial_loss",
    "receptive_field",
    "sgd_step",
    "soft_weight_sum",
    "softmax",
    "tensor_fill",
    "toy_profile",
    "train",
]

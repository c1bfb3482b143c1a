"""Two-stream video transformer lab.

A desk-scale spatial/temporal expert model with bottleneck
cross-attention exchange, parameter-efficient adapters, a synthetic
compositional-action benchmark, training and evaluation tooling, and an
analytic parameter/FLOP profiler.
"""

from .config import RunConfig
from .data import SyntheticDataset, SyntheticSpec, generate, read_dataset, write_dataset
from .metrics import MetricsReport, f1_scores, harmonic_mean
from .model import (CastConfig, CastModel, VARIANTS, build_variant,
                    load_checkpoint, save_checkpoint)
from .profiler import CostReport, count_flops, count_params, tower_flops
from .tensor import Parameter, Tensor
from .tokens import ConfigError, TokenGrid, VideoClip
from .train import TrainConfig, evaluate, infer_multiview, train

__version__ = "0.1.0"

__all__ = [
    "RunConfig", "SyntheticDataset", "SyntheticSpec", "generate",
    "read_dataset", "write_dataset", "MetricsReport", "f1_scores",
    "harmonic_mean", "CastConfig", "CastModel", "VARIANTS", "build_variant",
    "load_checkpoint", "save_checkpoint", "CostReport", "count_flops",
    "count_params", "tower_flops", "Parameter", "Tensor", "ConfigError",
    "TokenGrid", "VideoClip", "TrainConfig", "evaluate", "infer_multiview",
    "train",
]

"""Super-resolution networks whose residual blocks use binary weights."""

__version__ = "0.1.0"

from .binary import PackedBits, alpha_deterministic, binarize, pack, unpack
from .infer import (
    CostModel, OpReport, SizeReport, binconv_mulfree, count_ops, estimate_speedup,
    load_model, model_size, save_model,
)
from .models import (
    SrModel, SrModelConfig, build_model, build_pyramid_sr, build_resnet_sr,
    count_parameters, forward_sr,
)
from .train import TrainConfig, TrainingLog, lr_schedule, train

__all__ = [
    "PackedBits", "alpha_deterministic", "binarize", "pack", "unpack",
    "CostModel", "OpReport", "SizeReport", "binconv_mulfree", "count_ops",
    "estimate_speedup", "load_model", "model_size", "save_model",
    "SrModel", "SrModelConfig", "build_model", "build_pyramid_sr", "build_resnet_sr",
    "count_parameters", "forward_sr", "TrainConfig", "TrainingLog", "lr_schedule", "train",
]

"""3-D lightweight convolutional networks for hyperspectral classification,
with residual baselines, transfer learning and exact cost accounting."""

__version__ = "0.1.0"

from .cost import ConvSpec, CostReport, count_macs, count_params
from .data import (
    HsiScene,
    NormStats,
    SampleCube,
    SplitSpec,
    extract_cube,
    extract_cubes,
    inflate_rgb,
    make_splits,
    normalize,
    synth_scene,
)
from .metrics import MetricsReport, confusion_matrix, evaluate
from .models import ARCHITECTURES, LwUnitConfig, ModelGraph, build_model
from .training import OptimizerConfig, lr_at, nll_loss, sgd_step, train
from .transfer import (
    Checkpoint,
    TransferPlan,
    fine_tune,
    load_checkpoint,
    load_transfer,
    save_checkpoint,
)

__all__ = [
    "ARCHITECTURES",
    "Checkpoint",
    "ConvSpec",
    "CostReport",
    "HsiScene",
    "LwUnitConfig",
    "MetricsReport",
    "ModelGraph",
    "NormStats",
    "OptimizerConfig",
    "SampleCube",
    "SplitSpec",
    "TransferPlan",
    "build_model",
    "confusion_matrix",
    "count_macs",
    "count_params",
    "evaluate",
    "extract_cube",
    "extract_cubes",
    "fine_tune",
    "inflate_rgb",
    "load_checkpoint",
    "load_transfer",
    "lr_at",
    "make_splits",
    "nll_loss",
    "normalize",
    "save_checkpoint",
    "sgd_step",
    "synth_scene",
    "train",
]

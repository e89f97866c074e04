"""Endoscopic vessel segmentation toolkit.

Submodules: raster (image/mask I/O and FOV), profiler (dataset quality
metrics), skeleton (thinning, graph analysis, topology-aware targets),
corrupt (physics-aware degradation), metrics (hard evaluation), losses
(differentiable training objectives), model (hybrid attention-convolution
network), checkpoint (binary weight container), train (three-stage
protocol), synth (procedural vessel corpus), cli (command-line interface).
"""

from .errors import ConfigError, DataError, NumericFault, UndefinedMetricError, VesselSegError
from .raster import BinaryMask, ProbMap, RasterImage, extract_fov, load_image, load_mask, save_image, save_mask
from .skeleton import SkeletonGraph, prune_targets, skeletonize
from .corrupt import CorruptionSpec, corrupt
from .metrics import ConfusionCounts, cl_dice, confusion, dice, iou
from .losses import LossWeights, bce_loss, dice_loss, soft_cldice_loss, tversky_loss
from .model import HacConfig, HacNet, build_model, droppath_schedule, fuse
from .checkpoint import load_checkpoint, save_checkpoint, state_checksum
from .train import TrainPlan, run_stage1, run_stage2, run_stage3, predict
from .synth import make_synthetic_dataset

__version__ = "0.1.0"

__all__ = [
    "BinaryMask", "ProbMap", "RasterImage", "extract_fov", "load_image", "load_mask",
    "save_image", "save_mask", "SkeletonGraph", "prune_targets", "skeletonize",
    "CorruptionSpec", "corrupt", "ConfusionCounts", "cl_dice", "confusion", "dice", "iou",
    "LossWeights", "bce_loss", "dice_loss", "soft_cldice_loss", "tversky_loss",
    "HacConfig", "HacNet", "build_model", "droppath_schedule", "fuse",
    "load_checkpoint", "save_checkpoint", "state_checksum",
    "TrainPlan", "run_stage1", "run_stage2", "run_stage3", "predict",
    "make_synthetic_dataset",
    "ConfigError", "DataError", "NumericFault", "UndefinedMetricError", "VesselSegError",
]

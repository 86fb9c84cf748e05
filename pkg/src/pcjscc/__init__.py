"""Semantic point-cloud transmission over AWGN channels.

The transmitter sends softmax logits over a receiver-side feature pool; the
receiver aggregates pool rows, predicts centers and folds a 2D grid around
each one to rebuild the cloud.
"""
from .channel import NOISELESS, ChannelConfig, power_normalize, transmit
from .geometry import PointCloud, estimate_normals, fps_downsample, normalize_to_range
from .metrics import MetricsReport, chamfer_distance, d1_error, d2_error, evaluate, ortho_metric, psnr
from .model import ModelConfig, Transceiver, load_checkpoint, save_checkpoint
from .training import TrainConfig, gradcheck, train

__version__ = "0.1.0"

__all__ = [
    "NOISELESS", "ChannelConfig", "power_normalize", "transmit",
    "PointCloud", "estimate_normals", "fps_downsample", "normalize_to_range",
    "MetricsReport", "chamfer_distance", "d1_error", "d2_error", "evaluate", "ortho_metric", "psnr",
    "ModelConfig", "Transceiver", "load_checkpoint", "save_checkpoint",
    "TrainConfig", "gradcheck", "train",
]

"""Underwater image enhancement with selective scanning and spectral filtering."""

from .block import SSBlock, SSBlockConfig
from .config import ABLATIONS, RunConfig, ablation_config, load_run_config
from .data import DegradationParams, PairedSample, augment, build_dataset, degrade, make_clean
from .errors import (BroadcastError, ConfigError, ContractError, FormatError, NumericError, ShapeError,
                     SymmetryError, UWError)
from .estimator import UnderwaterEnhancer, check_images
from .losses import LossConfig, fwl, l1_loss, lfd, psnr, ssim, total_loss
from .network import EnhancementNet, NetworkConfig, count_params, preset
from .scan import CycleScan, attention_reference, mcss, selective_scan
from .spectral import dft2, idft2
from .spectral_filter import GlobalFilter, SpectralAttention
from .tensor import Tensor, no_grad
from .training import Adam, TrainConfig, lr_at, train, train_preset

__version__ = "0.1.0"

__all__ = [
    "ABLATIONS", "Adam", "BroadcastError", "ConfigError", "ContractError", "CycleScan", "DegradationParams",
    "EnhancementNet", "FormatError", "GlobalFilter", "LossConfig", "NetworkConfig", "NumericError",
    "PairedSample", "RunConfig", "SSBlock", "SSBlockConfig", "ShapeError", "SpectralAttention", "SymmetryError",
    "Tensor", "TrainConfig", "UWError", "UnderwaterEnhancer", "ablation_config", "attention_reference",
    "augment", "build_dataset", "check_images", "count_params", "degrade", "dft2", "fwl", "idft2", "l1_loss",
    "lfd", "load_run_config", "lr_at", "make_clean", "mcss", "no_grad", "preset", "psnr", "selective_scan",
    "ssim", "total_loss", "train", "train_preset",
]

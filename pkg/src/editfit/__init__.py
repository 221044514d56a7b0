"""editfit: learn a photo edit from one before/after pair, apply it anywhere."""

from .imgio import Image, load_image, make_coord_grid, save_image
from .inference import apply_model
from .metrics import color_hist3d, psnr, select_reference, ssim
from .model import (
    ModelConfig,
    ModelParams,
    forward_model,
    init_model,
    load_model,
    mac_count,
    param_count,
    save_model,
)
from .presets import PresetSpec, make_fixture_set, render_preset
from .sampler import ReferencePair, WindowBatch, sample_windows
from .trainer import TrainConfig, lr_at, train

__all__ = [
    "Image",
    "ModelConfig",
    "ModelParams",
    "PresetSpec",
    "ReferencePair",
    "TrainConfig",
    "WindowBatch",
    "apply_model",
    "color_hist3d",
    "forward_model",
    "init_model",
    "load_image",
    "load_model",
    "lr_at",
    "mac_count",
    "make_coord_grid",
    "make_fixture_set",
    "param_count",
    "psnr",
    "render_preset",
    "sample_windows",
    "save_image",
    "save_model",
    "select_reference",
    "ssim",
    "train",
]

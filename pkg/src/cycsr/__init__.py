"""Cyclic adversarial super-resolution for realistically degraded images.

The package covers the full loop: synthesizing degraded LR images, the four
networks (SR generator with a noise-adaptive projection, LR generator, two
relativistic critics), the composite training objective, reference metrics,
and self-ensembled inference, all behind a small CLI.
"""

from .degradation import DegradationSpec, add_sensor_noise, bicubic_downsample, degrade, jpeg_compress
from .imaging import (
    ALL_TRANSFORMS,
    GeomTransform,
    apply_transform,
    extract_patch_pair,
    load_image,
    save_image,
)
from .inference import load_sr_generator, super_resolve, super_resolve_ensemble
from .losses import LossWeights, composite_generator_loss, preset_weights
from .metrics import evaluate_dir, ms_ssim, psnr, ssim
from .models import (
    GLRConfig,
    GSRConfig,
    HRDiscriminator,
    LRDiscriminator,
    LRGenerator,
    SRGenerator,
    count_parameters,
)
from .training import TrainConfig, estimate_noise_sigma, lr_at, run_ablation, train

__version__ = "0.1.0"

__all__ = [
    "ALL_TRANSFORMS",
    "DegradationSpec",
    "GLRConfig",
    "GSRConfig",
    "GeomTransform",
    "HRDiscriminator",
    "LRDiscriminator",
    "LRGenerator",
    "LossWeights",
    "SRGenerator",
    "TrainConfig",
    "add_sensor_noise",
    "apply_transform",
    "bicubic_downsample",
    "composite_generator_loss",
    "count_parameters",
    "degrade",
    "estimate_noise_sigma",
    "evaluate_dir",
    "extract_patch_pair",
    "jpeg_compress",
    "load_image",
    "load_sr_generator",
    "lr_at",
    "ms_ssim",
    "preset_weights",
    "psnr",
    "run_ablation",
    "save_image",
    "ssim",
    "super_resolve",
    "super_resolve_ensemble",
    "train",
]

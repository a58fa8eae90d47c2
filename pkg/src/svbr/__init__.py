"""Spatially-varying defocus blur toolkit.

Synthesis of disk-PSF blur fields, emulation of estimated blur maps via
edge sparsification plus matting-Laplacian / domain-transform
propagation, a dual-branch encoder-decoder deblurring network trained
with an SSIM loss, a per-scale Richardson-Lucy baseline, and a metrics
harness.
"""

from .augmentation import (
    DtConfig,
    MattingConfig,
    SparseBlurMap,
    detect_edges,
    domain_transform,
    make_augmented_variants,
    matting_laplacian,
    propagate_dt,
    propagate_matting,
    sparsify_at_edges,
)
from .baseline import richardson_lucy, sv_deconvolve_baseline
from .common import ShapeMismatchError, SvbrError
from .kernels import (
    MAX_RADIUS,
    BlurField,
    BlurScaleSet,
    DiskKernel,
    FieldPatternSpec,
    default_pattern_bank,
    generate_blur_field,
    make_disk_kernel,
    make_scale_set,
    quantize_radii,
    quantize_radius,
)
from .metrics import SsimConfig, format_quality, mae_blur, psnr, ssim, ssim_loss
from .network import (
    NetworkConfig,
    SVBRNet,
    deblur_image,
    expected_parameter_count,
    gradient_check,
    load_checkpoint,
    save_checkpoint,
)
from .synthesis import NoiseConfig, decompose_field, sv_convolve, sv_convolve_naive
from .training import TrainConfig, TrainLog, adam_step, lr_schedule, train

__version__ = "0.1.0"

__all__ = [
    "MAX_RADIUS",
    "BlurField",
    "BlurScaleSet",
    "DiskKernel",
    "DtConfig",
    "FieldPatternSpec",
    "MattingConfig",
    "NetworkConfig",
    "NoiseConfig",
    "SVBRNet",
    "ShapeMismatchError",
    "SparseBlurMap",
    "SsimConfig",
    "SvbrError",
    "TrainConfig",
    "TrainLog",
    "adam_step",
    "deblur_image",
    "decompose_field",
    "default_pattern_bank",
    "detect_edges",
    "domain_transform",
    "expected_parameter_count",
    "format_quality",
    "generate_blur_field",
    "gradient_check",
    "load_checkpoint",
    "lr_schedule",
    "mae_blur",
    "make_augmented_variants",
    "make_disk_kernel",
    "make_scale_set",
    "matting_laplacian",
    "propagate_dt",
    "propagate_matting",
    "psnr",
    "quantize_radii",
    "quantize_radius",
    "richardson_lucy",
    "save_checkpoint",
    "sparsify_at_edges",
    "ssim",
    "ssim_loss",
    "sv_convolve",
    "sv_convolve_naive",
    "sv_deconvolve_baseline",
    "train",
]

"""Image quality metrics: SSIM, PSNR, blur-map MAE, and the SSIM training loss.

SSIM uses the standard 11x11 Gaussian window (sigma 1.5), k1=0.01,
k2=0.03, dynamic range 1.0, with valid-region windowing (no padding).
The training loss is the batch mean of 1 minus the per-channel-average
SSIM; a torch implementation of the same computation provides gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from scipy import ndimage

from .common import ShapeMismatchError, ensure_image
from .kernels import BlurField

PSNR_REPORT_CAP = 99.0


@dataclass(frozen=True)
class SsimConfig:
    window_size: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0

    def __post_init__(self) -> None:
        if self.k1 <= 0 or self.k2 <= 0:
            raise ValueError("k1 and k2 must be positive")
        if self.window_size % 2 != 1 or self.window_size < 3:
            raise ValueError("window size must be an odd integer >= 3")


DEFAULT_SSIM = SsimConfig()


def gaussian_window(size: int, sigma: float) -> np.ndarray:
    """Normalized 2-D Gaussian window (weights sum to 1)."""
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


class SsimResult(NamedTuple):
    per_channel: tuple[float, ...]
    mean: float


def _local_means(x: np.ndarray, window: np.ndarray) -> np.ndarray:
    m = window.shape[0] // 2
    full = ndimage.correlate(x, window, mode="nearest")
    return full[m:-m, m:-m]


def _ssim_channel(a: np.ndarray, b: np.ndarray, cfg: SsimConfig) -> float:
    window = gaussian_window(cfg.window_size, cfg.sigma)
    c1 = (cfg.k1 * cfg.dynamic_range) ** 2
    c2 = (cfg.k2 * cfg.dynamic_range) ** 2
    mu_a = _local_means(a, window)
    mu_b = _local_means(b, window)
    var_a = _local_means(a * a, window) - mu_a**2
    var_b = _local_means(b * b, window) - mu_b**2
    cov = _local_means(a * b, window) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(a: np.ndarray, b: np.ndarray, cfg: SsimConfig = DEFAULT_SSIM) -> SsimResult:
    """Per-channel SSIM and the channel mean over the valid window region."""
    ia = ensure_image(a)
    ib = ensure_image(b)
    if ia.shape != ib.shape:
        raise ShapeMismatchError(f"shape mismatch: {ia.shape} vs {ib.shape}")
    if min(ia.shape[0], ia.shape[1]) < cfg.window_size:
        raise ValueError(f"image smaller than the {cfg.window_size}x{cfg.window_size} window")
    vals = tuple(_ssim_channel(ia[:, :, c], ib[:, :, c], cfg) for c in range(ia.shape[2]))
    return SsimResult(vals, float(np.mean(vals)))


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB; +inf for identical inputs."""
    ia = ensure_image(a)
    ib = ensure_image(b)
    if ia.shape != ib.shape:
        raise ShapeMismatchError(f"shape mismatch: {ia.shape} vs {ib.shape}")
    mse = float(np.mean((ia - ib) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def format_quality(ssim_value: float, psnr_value: float) -> str:
    """Report formatting, e.g. '0.902/26.62'; PSNR capped at 99 dB."""
    return f"{ssim_value:.3f}/{min(psnr_value, PSNR_REPORT_CAP):.2f}"


def mae_blur(a: BlurField, b: BlurField) -> float:
    """Mean absolute error between two blur fields, in radius units."""
    if a.radii.shape != b.radii.shape:
        raise ShapeMismatchError(f"shape mismatch: {a.radii.shape} vs {b.radii.shape}")
    return float(np.mean(np.abs(a.radii - b.radii)))


def loss_from_ssim(per_channel: Sequence[float]) -> float:
    """Single-pair loss term: 1 minus the per-channel SSIM average."""
    return 1.0 - float(np.mean(per_channel))


def ssim_loss(
    pairs: Sequence[tuple[np.ndarray, np.ndarray]], cfg: SsimConfig = DEFAULT_SSIM
) -> float:
    """Batch loss: mean over pairs of (1 - per-channel-average SSIM).

    Values lie in [0, 2]; 0 iff every pair is identical.
    """
    if len(pairs) == 0:
        raise ValueError("empty batch")
    terms = []
    for pred, target in pairs:
        ensure_image(pred, channels=3)
        ensure_image(target, channels=3)
        terms.append(loss_from_ssim(ssim(pred, target, cfg).per_channel))
    return float(np.mean(terms))


# --- differentiable torch path (same computation, used for training) ---


def _torch_window(cfg: SsimConfig, channels: int, dtype, device) -> torch.Tensor:
    w = torch.from_numpy(gaussian_window(cfg.window_size, cfg.sigma)).to(dtype=dtype, device=device)
    return w.expand(channels, 1, cfg.window_size, cfg.window_size).contiguous()


def ssim_torch(a: torch.Tensor, b: torch.Tensor, cfg: SsimConfig = DEFAULT_SSIM) -> torch.Tensor:
    """Per-channel SSIM for batched tensors, shape (B, C, H, W) -> (B, C)."""
    if a.shape != b.shape:
        raise ShapeMismatchError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    channels = a.shape[1]
    window = _torch_window(cfg, channels, a.dtype, a.device)
    c1 = (cfg.k1 * cfg.dynamic_range) ** 2
    c2 = (cfg.k2 * cfg.dynamic_range) ** 2
    mu_a = F.conv2d(a, window, groups=channels)
    mu_b = F.conv2d(b, window, groups=channels)
    var_a = F.conv2d(a * a, window, groups=channels) - mu_a**2
    var_b = F.conv2d(b * b, window, groups=channels) - mu_b**2
    cov = F.conv2d(a * b, window, groups=channels) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return (num / den).mean(dim=(2, 3))


def ssim_loss_torch(
    pred: torch.Tensor, target: torch.Tensor, cfg: SsimConfig = DEFAULT_SSIM
) -> torch.Tensor:
    """Differentiable batch SSIM loss for (B, C, H, W) tensors."""
    per_channel = ssim_torch(pred, target, cfg)
    return (1.0 - per_channel.mean(dim=1)).mean()

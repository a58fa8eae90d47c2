"""Shared validation helpers and exception types."""

from __future__ import annotations

import numpy as np


class SvbrError(Exception):
    """Base class for all toolkit errors."""


class ShapeMismatchError(SvbrError):
    """Raised when two grids that must share a shape do not."""


def ensure_image(arr: np.ndarray, channels: int | None = None) -> np.ndarray:
    """Validate an image grid and return it as float64 H x W x C.

    An image grid is an H x W x C array (C in {1, 3}) of finite values in
    [0, 1]. 2-D input is promoted to a single-channel grid.
    """
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3 or a.shape[2] not in (1, 3):
        raise ShapeMismatchError(f"expected HxWxC image with C in {{1,3}}, got shape {arr.shape}")
    if channels is not None and a.shape[2] != channels:
        raise ShapeMismatchError(f"expected {channels}-channel image, got {a.shape[2]}")
    if not np.all(np.isfinite(a)):
        raise ValueError("image contains non-finite values")
    if a.min() < -1e-9 or a.max() > 1.0 + 1e-9:
        raise ValueError(f"image values outside [0, 1]: min={a.min():g} max={a.max():g}")
    return np.clip(a, 0.0, 1.0)


def luminance(image: np.ndarray) -> np.ndarray:
    """Rec. 601 luma of an H x W x C grid (pass-through for grayscale)."""
    img = ensure_image(image)
    if img.shape[2] == 1:
        return img[:, :, 0]
    return 0.299 * img[:, :, 0] + 0.587 * img[:, :, 1] + 0.114 * img[:, :, 2]

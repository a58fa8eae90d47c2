"""Disk point-spread functions and synthetic spatially-varying blur fields.

Blur amount is parameterized as a disk radius in pixels. The canonical scale
set holds 23 radii from 0.5 to 6.0 in steps of 0.25; blur fields quantize
onto that set so spatially-varying convolution can batch per scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

MAX_RADIUS = 6.0

#: Radii below this quantize to the identity kernel (0.5 minus half the
#: 0.25 scale gap; 0 itself is not a member of the scale set).
IDENTITY_THRESHOLD = 0.375

DEFAULT_SUPERSAMPLE = 16


@dataclass(frozen=True)
class BlurScaleSet:
    """Ordered set of quantized disk radii."""

    scales: tuple[float, ...]

    def __len__(self) -> int:
        return len(self.scales)

    def __getitem__(self, i: int) -> float:
        return self.scales[i]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.scales, dtype=np.float64)


def make_scale_set() -> BlurScaleSet:
    """The canonical 23-radius set: 0.5, 0.75, ..., 6.0."""
    return BlurScaleSet(tuple(0.5 + 0.25 * k for k in range(23)))


@dataclass(frozen=True)
class DiskKernel:
    """Normalized 2-D disk PSF for one blur radius.

    ``support`` is the odd side length; ``weights`` sum to 1 and are
    symmetric under horizontal/vertical/transpose reflection.
    """

    radius: float
    support: int
    weights: np.ndarray

    def __post_init__(self) -> None:
        self.weights.setflags(write=False)


def disk_support(radius: float) -> int:
    """Odd kernel side length covering a disk of the given radius."""
    if radius <= 0:
        return 1
    return 2 * math.ceil(radius) + 1


@lru_cache(maxsize=128)
def _disk_weights(radius: float, supersample: int) -> np.ndarray:
    size = disk_support(radius)
    if size == 1:
        return np.ones((1, 1), dtype=np.float64)
    half = size // 2
    s = supersample
    # Subsample centers for pixel at integer offset c: c - 0.5 + (i + 0.5)/s.
    sub = (np.arange(s) + 0.5) / s - 0.5
    coords = (np.arange(size) - half)[:, None] + sub[None, :]
    coords = coords.ravel()
    inside = coords[:, None] ** 2 + coords[None, :] ** 2 <= radius * radius
    counts = inside.reshape(size, s, size, s).sum(axis=(1, 3)).astype(np.float64)
    return counts / counts.sum()


def make_disk_kernel(radius: float, supersample: int = DEFAULT_SUPERSAMPLE) -> DiskKernel:
    """Anti-aliased disk kernel via pixel-area supersampling.

    Each weight approximates the fraction of the pixel covered by the disk,
    estimated with ``supersample**2`` subsamples per pixel, then globally
    normalized to sum 1. ``radius`` 0 yields the 1x1 identity kernel.
    """
    if not 0.0 <= radius <= MAX_RADIUS:
        raise ValueError(f"radius must be in [0, {MAX_RADIUS}], got {radius}")
    if supersample < 1:
        raise ValueError(f"supersample must be >= 1, got {supersample}")
    w = _disk_weights(float(radius), int(supersample))
    return DiskKernel(radius=float(radius), support=w.shape[0], weights=w)


def quantize_radius(radius: float, scale_set: BlurScaleSet | None = None) -> tuple[int, float]:
    """Map a radius to the nearest scale; returns (index, value).

    Radii below ``IDENTITY_THRESHOLD`` map to (-1, 0.0), the identity
    kernel. Ties round toward the smaller scale; radii past the last
    scale clamp to it.
    """
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    ss = scale_set or make_scale_set()
    if radius < IDENTITY_THRESHOLD:
        return -1, 0.0
    scales = ss.scales
    pos = (radius - scales[0]) / (scales[1] - scales[0])
    lo = min(max(math.floor(pos), 0), len(scales) - 1)
    hi = min(lo + 1, len(scales) - 1)
    if abs(radius - scales[hi]) < abs(radius - scales[lo]):
        return hi, scales[hi]
    return lo, scales[lo]


def quantize_radii(radii: np.ndarray, scale_set: BlurScaleSet | None = None) -> np.ndarray:
    """Vectorized ``quantize_radius``: array of radii -> array of indices."""
    ss = scale_set or make_scale_set()
    r = np.asarray(radii, dtype=np.float64)
    if r.size and r.min() < 0:
        raise ValueError("radii must be >= 0")
    scales = ss.as_array()
    pos = (r - scales[0]) / (scales[1] - scales[0])
    lo = np.clip(np.floor(pos).astype(np.int64), 0, len(scales) - 1)
    hi = np.minimum(lo + 1, len(scales) - 1)
    take_hi = np.abs(r - scales[hi]) < np.abs(r - scales[lo])
    idx = np.where(take_hi, hi, lo)
    return np.where(r < IDENTITY_THRESHOLD, -1, idx)


@dataclass
class BlurField:
    """Per-pixel blur radius map over an H x W grid."""

    radii: np.ndarray

    def __post_init__(self) -> None:
        r = np.asarray(self.radii, dtype=np.float64)
        if r.ndim != 2:
            raise ValueError(f"blur field must be 2-D, got shape {r.shape}")
        if not np.all(np.isfinite(r)):
            raise ValueError("blur field contains non-finite radii")
        if r.size and (r.min() < 0 or r.max() > MAX_RADIUS):
            raise ValueError(
                f"blur radii outside [0, {MAX_RADIUS}]: min={r.min():g} max={r.max():g}"
            )
        self.radii = r

    @property
    def height(self) -> int:
        return self.radii.shape[0]

    @property
    def width(self) -> int:
        return self.radii.shape[1]


PATTERN_KINDS = ("linear_ramp", "radial", "step_layers", "smooth_layers")


@dataclass(frozen=True)
class FieldPatternSpec:
    """Declarative recipe for one synthetic depth-change pattern.

    ``params`` are kind-specific: ``angle_deg`` (ramp/layer orientation),
    ``start_index``/``end_index`` (ramp endpoints as scale indices),
    ``center_x``/``center_y`` (radial center, relative 0..1),
    ``n_layers`` (layer count). Layer scale indices are drawn from ``seed``.
    """

    pattern_kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.pattern_kind not in PATTERN_KINDS:
            raise ValueError(f"unsupported pattern kind: {self.pattern_kind!r}")


def _projection(height: int, width: int, angle_deg: float) -> np.ndarray:
    """Normalized [0, 1] projection of pixel coordinates onto a direction."""
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    theta = math.radians(angle_deg)
    p = xx * math.cos(theta) + yy * math.sin(theta)
    lo, hi = p.min(), p.max()
    if hi - lo < 1e-12:
        return np.zeros_like(p)
    return (p - lo) / (hi - lo)


def _snap_to_scale(cont_index: np.ndarray, scales: np.ndarray) -> np.ndarray:
    idx = np.clip(np.floor(cont_index + 0.5).astype(np.int64), 0, len(scales) - 1)
    return scales[idx]


def generate_blur_field(spec: FieldPatternSpec, height: int, width: int) -> BlurField:
    """Render a pattern spec to a blur field; every radius is a scale member."""
    if height < 32 or width < 32:
        raise ValueError(f"field must be at least 32x32, got {height}x{width}")
    scales = make_scale_set().as_array()
    rng = np.random.default_rng(spec.seed)
    p = spec.params
    kind = spec.pattern_kind

    if kind == "linear_ramp":
        t = _projection(height, width, p.get("angle_deg", 90.0))
        i0 = float(p.get("start_index", 0))
        i1 = float(p.get("end_index", len(scales) - 1))
        radii = _snap_to_scale(i0 + t * (i1 - i0), scales)
    elif kind == "radial":
        cy = p.get("center_y", 0.5) * (height - 1)
        cx = p.get("center_x", 0.5) * (width - 1)
        yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
        d = np.hypot(yy - cy, xx - cx)
        t = d / d.max()
        i0 = float(p.get("start_index", 0))
        i1 = float(p.get("end_index", len(scales) - 1))
        radii = _snap_to_scale(i0 + t * (i1 - i0), scales)
    elif kind == "step_layers":
        n = int(p.get("n_layers", 3))
        if not 1 <= n <= 5:
            raise ValueError(f"step_layers supports 1..5 layers, got {n}")
        indices = p.get("layer_indices")
        if indices is None:
            indices = rng.integers(0, len(scales), size=n)
        indices = np.asarray(indices, dtype=np.int64)
        t = _projection(height, width, p.get("angle_deg", 90.0))
        band = np.minimum((t * n).astype(np.int64), n - 1)
        radii = scales[indices[band]]
    elif kind == "smooth_layers":
        n = int(p.get("n_layers", 3))
        if not 1 <= n <= 5:
            raise ValueError(f"smooth_layers supports 1..5 layers, got {n}")
        knots = p.get("knot_indices")
        if knots is None:
            knots = rng.integers(0, len(scales), size=n + 1)
        knots = np.asarray(knots, dtype=np.float64)
        t = _projection(height, width, p.get("angle_deg", 90.0))
        cont = np.interp(t, np.linspace(0.0, 1.0, n + 1), knots)
        radii = _snap_to_scale(cont, scales)
    else:  # pragma: no cover - guarded by FieldPatternSpec
        raise ValueError(f"unsupported pattern kind: {kind!r}")

    return BlurField(radii)


def default_pattern_bank() -> list[FieldPatternSpec]:
    """Fixed bank of 39 depth-change patterns.

    8 full-range linear ramps at 45-degree increments, 3 radial patterns
    (centered plus two off-center), 16 step-layer patterns (2-5 layers x
    4 orientations) and 12 smooth-layer patterns (2-4 layers x 4
    orientations). Seeds are fixed so regeneration is bit-identical.
    """
    bank: list[FieldPatternSpec] = []
    last = 22
    for i, angle in enumerate(range(0, 360, 45)):
        bank.append(FieldPatternSpec(
            "linear_ramp",
            {"angle_deg": float(angle), "start_index": 0, "end_index": last},
            seed=100 + i,
        ))
    centers = [(0.5, 0.5), (0.25, 0.3), (0.75, 0.65)]
    for i, (cx, cy) in enumerate(centers):
        bank.append(FieldPatternSpec(
            "radial",
            {"center_x": cx, "center_y": cy, "start_index": 0, "end_index": last},
            seed=200 + i,
        ))
    i = 0
    for n in (2, 3, 4, 5):
        for angle in (0.0, 45.0, 90.0, 135.0):
            bank.append(FieldPatternSpec(
                "step_layers", {"angle_deg": angle, "n_layers": n}, seed=300 + i,
            ))
            i += 1
    i = 0
    for n in (2, 3, 4):
        for angle in (0.0, 45.0, 90.0, 135.0):
            bank.append(FieldPatternSpec(
                "smooth_layers", {"angle_deg": angle, "n_layers": n}, seed=400 + i,
            ))
            i += 1
    return bank

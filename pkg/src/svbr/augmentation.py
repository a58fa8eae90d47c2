"""Emulation of estimated blur maps.

Real edge-based blur estimators are accurate only at high-frequency
structures: they read blur at edges, then propagate it over the image,
and the propagation is where their characteristic artifacts come from.
To mimic that, a ground-truth blur field is sparsified to edge locations
and densified again by two schemes: a closed-form matting-Laplacian
solve (sparse linear system, conjugate gradient) and edge-aware
recursive domain-transform filtering.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
import scipy.sparse
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from .common import ShapeMismatchError, SvbrError, ensure_image, luminance
from .kernels import MAX_RADIUS, BlurField


class EmptyMaskError(SvbrError):
    """Propagation requested with no known pixels."""


class MattingConvergenceWarning(UserWarning):
    pass


@dataclass
class SparseBlurMap:
    """Blur values known only where ``mask`` is set."""

    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        m = np.asarray(self.mask, dtype=bool)
        if v.shape != m.shape or v.ndim != 2:
            raise ShapeMismatchError(f"values {v.shape} and mask {m.shape} must be equal 2-D shapes")
        known = v[m]
        if known.size and (known.min() < 0 or known.max() > MAX_RADIUS):
            raise ValueError("known blur values outside [0, 6]")
        self.values = v
        self.mask = m


@dataclass(frozen=True)
class MattingConfig:
    window_radius: int = 1
    epsilon: float = 1e-7
    lam: float = 100.0
    cg_tol: float = 1e-6
    cg_max_iters: int = 2000

    def __post_init__(self) -> None:
        if min(self.window_radius, self.epsilon, self.lam, self.cg_tol, self.cg_max_iters) <= 0:
            raise ValueError("all matting parameters must be positive")


@dataclass(frozen=True)
class DtConfig:
    sigma_s: float = 60.0
    sigma_r: float = 0.4
    iterations: int = 3

    def __post_init__(self) -> None:
        if min(self.sigma_s, self.sigma_r, self.iterations) <= 0:
            raise ValueError("all domain-transform parameters must be positive")


# --- edge detection -------------------------------------------------------

_SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64) / 8.0


def detect_edges(image: np.ndarray, low: float = 0.05, high: float = 0.15) -> np.ndarray:
    """Hysteresis-thresholded gradient edges of the luminance channel.

    Sobel gradients (scaled so a unit step has magnitude 0.5), 4-direction
    non-maximum suppression, then hysteresis: weak pixels (>= low) survive
    only in 8-connected components containing a strong pixel (>= high).
    """
    if not 0 <= low < high <= 1:
        raise ValueError(f"need 0 <= low < high <= 1, got low={low} high={high}")
    lum = luminance(image)
    gx = ndimage.correlate(lum, _SOBEL_X, mode="nearest")
    gy = ndimage.correlate(lum, _SOBEL_X.T, mode="nearest")
    mag = np.hypot(gx, gy)

    # Quantize gradient direction to 4 bins; offsets are (dy, dx).
    angle = np.mod(np.degrees(np.arctan2(gy, gx)), 180.0)
    offsets = [(0, 1), (1, 1), (1, 0), (1, -1)]
    bins = [
        (angle < 22.5) | (angle >= 157.5),
        (angle >= 22.5) & (angle < 67.5),
        (angle >= 67.5) & (angle < 112.5),
        (angle >= 112.5) & (angle < 157.5),
    ]
    padded = np.pad(mag, 1, mode="constant")
    nms = np.zeros_like(mag, dtype=bool)
    for sel, (dy, dx) in zip(bins, offsets):
        prev = padded[1 - dy : padded.shape[0] - 1 - dy, 1 - dx : padded.shape[1] - 1 - dx]
        nxt = padded[1 + dy : padded.shape[0] - 1 + dy, 1 + dx : padded.shape[1] - 1 + dx]
        nms |= sel & (mag > prev) & (mag >= nxt)

    weak = nms & (mag >= low)
    strong = nms & (mag >= high)
    if not strong.any():
        return np.zeros_like(weak)
    labels, n = ndimage.label(weak, structure=np.ones((3, 3), dtype=int))
    keep = np.zeros(n + 1, dtype=bool)
    keep[np.unique(labels[strong])] = True
    keep[0] = False
    return keep[labels]


def sparsify_at_edges(field: BlurField, edges: np.ndarray) -> SparseBlurMap:
    """Keep blur values only at edge locations."""
    edges = np.asarray(edges, dtype=bool)
    if edges.shape != field.radii.shape:
        raise ShapeMismatchError(f"field {field.radii.shape} and edges {edges.shape} differ")
    return SparseBlurMap(values=np.where(edges, field.radii, 0.0), mask=edges)


# --- matting-Laplacian propagation ----------------------------------------


def matting_laplacian(image: np.ndarray, cfg: MattingConfig = MattingConfig()) -> scipy.sparse.csr_matrix:
    """Closed-form matting Laplacian of a 3-channel image (N x N, N = H*W).

    For pixels i, j covered by a window with color mean mu and covariance
    S: contribution delta_ij - (1/w)(1 + (c_i - mu)^T (S + eps/w I)^-1
    (c_j - mu)), summed over all fully interior windows. Symmetric, zero
    row sums, positive semidefinite.
    """
    img = ensure_image(image, channels=3)
    h, w, d = img.shape
    r = cfg.window_radius
    diam = 2 * r + 1
    win_size = diam * diam
    if h < diam or w < diam:
        raise ValueError(f"image too small for window radius {r}")

    inds = np.arange(h * w).reshape(h, w)
    flat = img.reshape(h * w, d)
    win_inds = sliding_window_view(inds, (diam, diam)).reshape(-1, win_size)
    win_colors = flat[win_inds]  # (n_windows, win_size, 3)

    mu = win_colors.mean(axis=1, keepdims=True)
    centered = win_colors - mu
    cov = np.einsum("nwi,nwj->nij", centered, centered) / win_size
    inv = np.linalg.inv(cov + (cfg.epsilon / win_size) * np.eye(d))
    affinity = (1.0 + np.einsum("nwi,nij,nvj->nwv", centered, inv, centered)) / win_size
    vals = np.eye(win_size)[None, :, :] - affinity

    rows = np.repeat(win_inds, win_size, axis=1).ravel()
    cols = np.tile(win_inds, (1, win_size)).ravel()
    lap = scipy.sparse.coo_matrix((vals.ravel(), (rows, cols)), shape=(h * w, h * w)).tocsr()
    return (lap + lap.T) * 0.5


class SolveInfo(NamedTuple):
    converged: bool
    iterations: int
    residual: float
    residual_history: tuple[float, ...]
    raw_solution: np.ndarray


def solve_cg(
    matvec: Callable[[np.ndarray], np.ndarray],
    b: np.ndarray,
    x0: np.ndarray,
    tol: float,
    max_iters: int,
) -> tuple[np.ndarray, SolveInfo]:
    """Conjugate gradient for an SPD operator, relative-residual stopping.

    Minimal-residual smoothing runs alongside the CG recurrence: the
    returned iterate is the smoothed one, whose residual norm is
    nonincreasing by construction and never exceeds the CG residual.
    """
    x = x0.astype(np.float64).copy()
    r = b - matvec(x)
    p = r.copy()
    rs = float(r @ r)
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        b_norm = 1.0
    y = x.copy()  # smoothed iterate
    s = r.copy()  # its residual
    history = [float(np.linalg.norm(s)) / b_norm]
    converged = history[-1] <= tol
    it = 0
    while not converged and it < max_iters:
        ap = matvec(p)
        denom = float(p @ ap)
        if denom <= 0.0:
            break
        alpha = rs / denom
        x += alpha * p
        r -= alpha * ap
        rs_new = float(r @ r)
        p = r + (rs_new / rs) * p
        rs = rs_new
        # minimal-residual smoothing: best point on the segment [y, x]
        d = r - s
        dd = float(d @ d)
        theta = 0.0 if dd == 0.0 else -float(s @ d) / dd
        y += theta * (x - y)
        s += theta * d
        it += 1
        history.append(float(np.linalg.norm(s)) / b_norm)
        converged = history[-1] <= tol
    return y, SolveInfo(converged, it, history[-1], tuple(history), y.copy())


def propagate_matting(
    sparse: SparseBlurMap,
    image: np.ndarray,
    cfg: MattingConfig = MattingConfig(),
    return_info: bool = False,
):
    """Densify a sparse blur map by solving (L + lam*D) b = lam*D*b_sparse.

    D is the diagonal known-pixel indicator, so known values are a soft
    data term: outputs deviate slightly from the inputs, like real
    estimators do. Non-convergence emits a MattingConvergenceWarning.
    """
    if not sparse.mask.any():
        raise EmptyMaskError("no constraints: sparse map has no known pixels")
    img = ensure_image(image, channels=3)
    if img.shape[:2] != sparse.values.shape:
        raise ShapeMismatchError("image and sparse map shapes differ")
    lap = matting_laplacian(img, cfg)
    d = sparse.mask.ravel().astype(np.float64)
    b = cfg.lam * d * sparse.values.ravel()
    x0 = np.full(d.shape, float(sparse.values[sparse.mask].mean()))

    def matvec(v: np.ndarray) -> np.ndarray:
        return lap @ v + cfg.lam * d * v

    x, info = solve_cg(matvec, b, x0, cfg.cg_tol, cfg.cg_max_iters)
    if not info.converged:
        warnings.warn(
            f"matting CG did not converge in {info.iterations} iterations "
            f"(relative residual {info.residual:.3e})",
            MattingConvergenceWarning,
        )
    out = BlurField(np.clip(x.reshape(sparse.values.shape), 0.0, MAX_RADIUS))
    return (out, info) if return_info else out


# --- domain-transform propagation -----------------------------------------


class DomainTransforms(NamedTuple):
    """Cumulative scanline transforms: ct_h along rows, ct_v along columns."""

    ct_h: np.ndarray
    ct_v: np.ndarray


def domain_transform(guide: np.ndarray, cfg: DtConfig = DtConfig()) -> DomainTransforms:
    """Per-scanline cumulative transform ct with slope 1 + (s_s/s_r)*sum|dI|."""
    img = ensure_image(guide)
    k = cfg.sigma_s / cfg.sigma_r
    dx = np.abs(np.diff(img, axis=1)).sum(axis=2)
    dy = np.abs(np.diff(img, axis=0)).sum(axis=2)
    h, w = img.shape[:2]
    ct_h = np.zeros((h, w), dtype=np.float64)
    np.cumsum(1.0 + k * dx, axis=1, out=ct_h[:, 1:])
    ct_v = np.zeros((h, w), dtype=np.float64)
    np.cumsum(1.0 + k * dy, axis=0, out=ct_v[1:, :])
    return DomainTransforms(ct_h, ct_v)


def rf_feedback(sigma_h: float) -> float:
    """Feedback coefficient of the recursive filter for one pass."""
    return math.exp(-math.sqrt(2.0) / sigma_h)


def rf_pass_horizontal(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Bidirectional recursive filter along rows.

    ``weights[:, j]`` is the feedback a**d between columns j-1 and j
    (column 0 unused). Runs left-to-right then right-to-left.
    """
    out = values.astype(np.float64).copy()
    w = values.shape[1]
    for j in range(1, w):
        out[:, j] += weights[:, j] * (out[:, j - 1] - out[:, j])
    for j in range(w - 2, -1, -1):
        out[:, j] += weights[:, j + 1] * (out[:, j + 1] - out[:, j])
    return out


def rf_pass_vertical(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Bidirectional recursive filter along columns (see rf_pass_horizontal)."""
    return rf_pass_horizontal(values.T, weights.T).T


def rf_sigma_for_iteration(sigma_s: float, iteration: int, total: int) -> float:
    """Per-iteration filter sigma; halves each iteration, variance-preserving."""
    return sigma_s * math.sqrt(3.0) * 2.0 ** (total - iteration - 1) / math.sqrt(4.0**total - 1.0)


def _rf_filter(channels: list[np.ndarray], transforms: DomainTransforms, cfg: DtConfig) -> None:
    d_h = np.zeros_like(transforms.ct_h)
    d_h[:, 1:] = np.diff(transforms.ct_h, axis=1)
    d_v = np.zeros_like(transforms.ct_v)
    d_v[1:, :] = np.diff(transforms.ct_v, axis=0)
    for i in range(cfg.iterations):
        a = rf_feedback(rf_sigma_for_iteration(cfg.sigma_s, i, cfg.iterations))
        w_h = a**d_h
        w_v = a**d_v
        for idx, ch in enumerate(channels):
            ch = rf_pass_horizontal(ch, w_h)
            channels[idx] = rf_pass_vertical(ch, w_v)


def propagate_dt(
    sparse: SparseBlurMap, image: np.ndarray, cfg: DtConfig = DtConfig()
) -> BlurField:
    """Densify a sparse blur map by joint-normalized DT filtering.

    Filters values*mask and mask with the same edge-aware recursive
    filter and divides; pixels the filter never reaches take the value
    of the nearest known pixel.
    """
    if not sparse.mask.any():
        raise EmptyMaskError("no constraints: sparse map has no known pixels")
    img = ensure_image(image)
    if img.shape[:2] != sparse.values.shape:
        raise ShapeMismatchError("image and sparse map shapes differ")
    transforms = domain_transform(img, cfg)
    mask = sparse.mask.astype(np.float64)
    channels = [sparse.values * mask, mask.copy()]
    _rf_filter(channels, transforms, cfg)
    num, den = channels
    out = np.zeros_like(num)
    reached = den >= 1e-8
    out[reached] = num[reached] / den[reached]
    if not reached.all():
        _, (iy, ix) = ndimage.distance_transform_edt(~sparse.mask, return_indices=True)
        nearest = sparse.values[iy, ix]
        out[~reached] = nearest[~reached]
    return BlurField(np.clip(out, 0.0, MAX_RADIUS))


def make_augmented_variants(
    field: BlurField,
    image: np.ndarray,
    m_cfg: MattingConfig = MattingConfig(),
    d_cfg: DtConfig = DtConfig(),
    edge_low: float = 0.05,
    edge_high: float = 0.15,
) -> tuple[BlurField, BlurField]:
    """Full augmentation pipeline: edges -> sparsify -> both propagations."""
    edges = detect_edges(image, edge_low, edge_high)
    sparse = sparsify_at_edges(field, edges)
    return (
        propagate_matting(sparse, image, m_cfg),
        propagate_dt(sparse, image, d_cfg),
    )

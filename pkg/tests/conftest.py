"""Shared scene builders and sample factories for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from svbr.augmentation import make_augmented_variants
from svbr.dataset import TrainSample
from svbr.kernels import FieldPatternSpec, generate_blur_field
from svbr.synthesis import sv_convolve


def toy_image(seed: int, n: int = 64, noise: float = 0.015) -> np.ndarray:
    """Pseudo-natural crop: smooth gradients, colored blobs, light texture."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:n, 0:n] / (n - 1)
    img = np.stack([0.3 + 0.4 * xx, 0.5 - 0.2 * yy + 0.2 * xx, 0.4 + 0.3 * yy], axis=2)
    for _ in range(6):
        cy, cx, r = rng.uniform(5, n - 5), rng.uniform(5, n - 5), rng.uniform(4, 12)
        blob = ((yy * (n - 1) - cy) ** 2 + (xx * (n - 1) - cx) ** 2) < r * r
        img[blob] = rng.uniform(0.1, 0.9, 3)
    if noise:
        img += rng.normal(0, noise, img.shape)
    return np.clip(img, 0, 1)


def uniform_scene(seed: int, n: int = 64) -> np.ndarray:
    """Statistically matched checker scene: overfits fast under SSIM.

    All seeds share the checker period, contrast band, and blob count so
    per-sample batch statistics agree and small-batch training transfers
    cleanly to eval mode.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:n, 0:n]
    base = ((yy // 6 + xx // 6) % 2).astype(float)
    c0 = 0.25 + 0.1 * rng.random(3)
    c1 = 0.65 + 0.1 * rng.random(3)
    img = base[:, :, None] * c0 + (1 - base[:, :, None]) * c1
    for _ in range(2):
        cy, cx, r = rng.uniform(12, n - 12), rng.uniform(12, n - 12), rng.uniform(6, 9)
        blob = ((yy - cy) ** 2 + (xx - cx) ** 2) < r * r
        img[blob] = 0.15 + 0.7 * rng.random(3)
    return np.clip(img, 0, 1)


def sparse_edge_scene(seed: int, n: int = 64) -> np.ndarray:
    """Checkered band plus large flat regions: propagation must guess there."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:n, 0:n]
    img = np.tile(0.35 + 0.15 * rng.random(3), (n, n, 1))
    band = (yy >= 8) & (yy < 32)
    base = ((yy // 8 + xx // 8) % 2).astype(float)
    c0 = 0.2 + 0.1 * rng.random(3)
    c1 = 0.7 + 0.1 * rng.random(3)
    checker = base[:, :, None] * c0 + (1 - base[:, :, None]) * c1
    img[band] = checker[band]
    for _ in range(2):
        cy = rng.uniform(40, n - 10)
        cx = rng.uniform(10, n - 10)
        r = rng.uniform(6, 10)
        blob = ((yy - cy) ** 2 + (xx - cx) ** 2) < r * r
        img[blob] = 0.15 + 0.7 * rng.random(3)
    return np.clip(img, 0, 1)


def field_specs(max_idx: int) -> list[FieldPatternSpec]:
    """Six distinct field patterns over scale indices [0, max_idx]."""
    return [
        FieldPatternSpec("linear_ramp", {"angle_deg": 90.0, "start_index": 0, "end_index": max_idx}, seed=1),
        FieldPatternSpec("linear_ramp", {"angle_deg": 0.0, "start_index": max_idx, "end_index": 0}, seed=2),
        FieldPatternSpec("step_layers", {"angle_deg": 45.0, "n_layers": 2, "layer_indices": [1, max_idx]}, seed=3),
        FieldPatternSpec("radial", {"center_x": 0.5, "center_y": 0.5, "start_index": 0, "end_index": max_idx}, seed=4),
        FieldPatternSpec("linear_ramp", {"angle_deg": 45.0, "start_index": 0, "end_index": max_idx}, seed=5),
        FieldPatternSpec("step_layers", {"angle_deg": 90.0, "n_layers": 3, "layer_indices": [0, max_idx, 3]}, seed=6),
    ]


def make_smoke_samples(n_samples: int = 4, max_idx: int = 10, size: int = 64) -> list[TrainSample]:
    """Overfit-friendly samples; augmented fields alias the true field."""
    specs = field_specs(max_idx)
    samples = []
    for i in range(n_samples):
        img = uniform_scene(i, size)
        field = generate_blur_field(specs[i % len(specs)], size, size)
        samples.append(TrainSample(
            id=f"s{i}", sharp=img, blurry=sv_convolve(img, field),
            field_true=field, field_matting=field, field_dt=field, split="train",
        ))
    return samples


def make_robustness_samples(n_samples: int = 6, max_idx: int = 12, size: int = 64) -> list[TrainSample]:
    """Samples with genuinely augmented (matting / DT) field variants."""
    specs = field_specs(max_idx)
    samples = []
    for i in range(n_samples):
        img = sparse_edge_scene(i, size)
        field = generate_blur_field(specs[i % len(specs)], size, size)
        blurry = sv_convolve(img, field)
        field_matting, field_dt = make_augmented_variants(field, img)
        samples.append(TrainSample(
            id=f"s{i}", sharp=img, blurry=blurry, field_true=field,
            field_matting=field_matting, field_dt=field_dt, split="train",
        ))
    return samples


@pytest.fixture(scope="session")
def natural_image():
    return toy_image(0)

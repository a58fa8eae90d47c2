"""Disk kernels, scale set, quantization, and blur-field patterns."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from svbr.kernels import (
    IDENTITY_THRESHOLD,
    BlurField,
    FieldPatternSpec,
    default_pattern_bank,
    generate_blur_field,
    make_disk_kernel,
    make_scale_set,
    quantize_radii,
    quantize_radius,
)

SCALES = make_scale_set()


def area_coverage_oracle(radius: float, subsamples: int = 64) -> np.ndarray:
    """Brute-force per-pixel disk coverage, plain loops."""
    size = 2 * math.ceil(radius) + 1 if radius > 0 else 1
    half = size // 2
    out = np.zeros((size, size))
    for iy in range(size):
        for ix in range(size):
            cy, cx = iy - half, ix - half
            count = 0
            for sy in range(subsamples):
                for sx in range(subsamples):
                    y = cy - 0.5 + (sy + 0.5) / subsamples
                    x = cx - 0.5 + (sx + 0.5) / subsamples
                    if x * x + y * y <= radius * radius:
                        count += 1
            out[iy, ix] = count / subsamples**2
    return out / out.sum()


class TestScaleSet:
    def test_canonical_values(self):
        assert len(SCALES) == 23
        assert SCALES[0] == 0.5
        assert SCALES[22] == 6.0
        assert SCALES[1] - SCALES[0] == 0.25

    def test_strictly_increasing_constant_gap(self):
        arr = SCALES.as_array()
        gaps = np.diff(arr)
        assert np.all(gaps > 0)
        assert np.allclose(gaps, 0.25, atol=1e-12)


class TestDiskKernel:
    def test_zero_radius_is_delta(self):
        k = make_disk_kernel(0.0)
        assert k.support == 1
        assert k.weights.tolist() == [[1.0]]

    def test_max_radius_support(self):
        assert make_disk_kernel(6.0).support == 13

    def test_support_rule(self):
        for r in (0.5, 1.0, 1.25, 2.75, 5.5):
            assert make_disk_kernel(r).support == 2 * math.ceil(r) + 1

    def test_matches_brute_force_oracle(self):
        expected = area_coverage_oracle(2.0, subsamples=64)
        got = make_disk_kernel(2.0, supersample=16).weights
        assert got.shape == expected.shape
        assert np.abs(got - expected).max() < 1e-4

    @pytest.mark.parametrize("radius", [0.5, 1.5, 3.25, 6.0])
    @pytest.mark.parametrize("supersample", [1, 4, 16])
    def test_normalized_and_symmetric(self, radius, supersample):
        w = make_disk_kernel(radius, supersample).weights
        assert abs(w.sum() - 1.0) < 1e-6
        assert np.abs(w - w[::-1, :]).max() < 1e-6
        assert np.abs(w - w[:, ::-1]).max() < 1e-6
        assert np.abs(w - w.T).max() < 1e-6

    @given(st.floats(min_value=0.0, max_value=6.0))
    @settings(max_examples=40, deadline=None)
    def test_normalization_property(self, radius):
        w = make_disk_kernel(radius).weights
        assert abs(w.sum() - 1.0) < 1e-6
        assert w.min() >= 0

    def test_nonincreasing_along_rays(self):
        for r in SCALES.as_array():
            w = make_disk_kernel(float(r)).weights
            c = w.shape[0] // 2
            for ray in (w[c, c:], w[c:, c], np.diagonal(w)[c:]):
                assert np.all(np.diff(ray) <= 1e-6)

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            make_disk_kernel(-0.1)
        with pytest.raises(ValueError):
            make_disk_kernel(6.5)
        with pytest.raises(ValueError):
            make_disk_kernel(1.0, supersample=0)


class TestQuantize:
    def test_nearest(self):
        assert quantize_radius(0.6) == (0, 0.5)

    def test_tie_rounds_down(self):
        assert quantize_radius(0.625) == (0, 0.5)

    def test_clamps_to_last(self):
        assert quantize_radius(6.3) == (22, 6.0)

    def test_identity_below_threshold(self):
        assert quantize_radius(0.0) == (-1, 0.0)
        assert quantize_radius(IDENTITY_THRESHOLD - 1e-9) == (-1, 0.0)
        assert quantize_radius(IDENTITY_THRESHOLD) == (0, 0.5)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            quantize_radius(-1.0)

    @given(st.integers(min_value=0, max_value=22))
    @settings(max_examples=23, deadline=None)
    def test_idempotent_on_members(self, i):
        idx, val = quantize_radius(SCALES[i])
        assert (idx, val) == (i, SCALES[i])

    def test_vectorized_matches_scalar(self):
        radii = np.linspace(0.0, 6.5, 131)
        idx = quantize_radii(np.minimum(radii, 6.0))
        for r, k in zip(radii, idx):
            assert quantize_radius(min(r, 6.0))[0] == k


class TestBlurField:
    def test_range_enforced(self):
        with pytest.raises(ValueError):
            BlurField(np.full((4, 4), 6.5))
        with pytest.raises(ValueError):
            BlurField(np.full((4, 4), -0.1))

    def test_shape_enforced(self):
        with pytest.raises(ValueError):
            BlurField(np.zeros((4, 4, 2)))


class TestGenerateField:
    def test_vertical_ramp_endpoints(self):
        spec = FieldPatternSpec(
            "linear_ramp", {"angle_deg": 90.0, "start_index": 0, "end_index": 22}, seed=0
        )
        f = generate_blur_field(spec, 64, 64)
        assert np.all(f.radii[0] == 0.5)
        assert np.all(f.radii[63] == 6.0)
        assert np.all(np.diff(f.radii, axis=0) >= 0)

    def test_single_step_layer_is_constant(self):
        spec = FieldPatternSpec(
            "step_layers", {"angle_deg": 0.0, "n_layers": 1, "layer_indices": [4]}, seed=0
        )
        f = generate_blur_field(spec, 32, 32)
        assert np.all(f.radii == 1.5)

    @pytest.mark.parametrize("bank_index", [0, 5, 10, 15, 25, 38])
    def test_values_in_scale_set(self, bank_index):
        f = generate_blur_field(default_pattern_bank()[bank_index], 48, 40)
        assert set(np.unique(f.radii)) <= set(SCALES.scales)

    def test_deterministic(self):
        spec = default_pattern_bank()[20]
        a = generate_blur_field(spec, 64, 64)
        b = generate_blur_field(spec, 64, 64)
        assert np.array_equal(a.radii, b.radii)

    def test_minimum_size(self):
        with pytest.raises(ValueError):
            generate_blur_field(default_pattern_bank()[0], 16, 64)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            FieldPatternSpec("swirl", {}, seed=0)


class TestPatternBank:
    def test_bank_size(self):
        assert len(default_pattern_bank()) == 39

    def test_pairwise_distinct(self):
        bank = default_pattern_bank()
        seen = {(s.pattern_kind, tuple(sorted(s.params.items())), s.seed) for s in bank}
        assert len(seen) == 39

    def test_kind_mix(self):
        bank = default_pattern_bank()
        kinds = [s.pattern_kind for s in bank]
        assert kinds.count("linear_ramp") == 8
        assert kinds.count("radial") == 3
        assert kinds.count("step_layers") == 16
        assert kinds.count("smooth_layers") == 12

    def test_regeneration_bit_identical(self):
        for spec in default_pattern_bank()[::7]:
            a = generate_blur_field(spec, 40, 56)
            b = generate_blur_field(spec, 40, 56)
            assert np.array_equal(a.radii, b.radii)

"""Similarity maps, normalization and resampling against hand-worked values."""

import math

import numpy as np
import pytest

from patchref import ProjectionParams, ValidationError
from patchref.spatialmap import (
    minmax_normalize,
    similarity_map,
    upsample_bilinear,
    upsample_nearest,
)


def loop_bilinear(m, height, width):
    """Scalar reference for align_corners = False resampling."""
    sh, sw = m.shape
    out = np.empty((height, width))
    for i in range(height):
        y = (i + 0.5) * (sh / height) - 0.5
        y0 = min(max(int(math.floor(y)), 0), sh - 1)
        y1 = min(y0 + 1, sh - 1)
        fy = min(max(y - y0, 0.0), 1.0)
        for j in range(width):
            x = (j + 0.5) * (sw / width) - 0.5
            x0 = min(max(int(math.floor(x)), 0), sw - 1)
            x1 = min(x0 + 1, sw - 1)
            fx = min(max(x - x0, 0.0), 1.0)
            top = m[y0, x0] + (m[y0, x1] - m[y0, x0]) * fx
            bottom = m[y1, x0] + (m[y1, x1] - m[y1, x0]) * fx
            out[i, j] = top + (bottom - top) * fy
    return out


def make_params(rng, d_star=6, d=4):
    return ProjectionParams(
        d_star=d_star,
        d=d,
        ln_gamma=rng.normal(1.0, 0.1, size=d_star),
        ln_beta=np.zeros(d_star),
        ln_eps=1e-5,
        projection=rng.normal(size=(d_star, d)),
        exit_layer=1,
        patch_grid=3,
    )


class TestSimilarityMap:
    def test_raw_values_stay_in_unit_interval(self):
        rng = np.random.default_rng(42)
        params = make_params(rng)
        for _ in range(20):
            patches = rng.normal(size=(3, 3, 6))
            ctx = rng.normal(size=4)
            sm = similarity_map(patches, ctx, params)
            assert sm.raw.shape == (3, 3)
            assert np.all(sm.raw >= -1.0) and np.all(sm.raw <= 1.0)
            assert np.all(sm.normalized >= 0.0) and np.all(sm.normalized <= 1.0)
            assert sm.zero_norm_patches == 0

    def test_constant_patch_counts_as_zero_norm(self):
        """With zero bias a constant hidden state normalizes to the zero
        vector, so its cosine is pinned at 0."""
        rng = np.random.default_rng(42)
        params = make_params(rng)
        patches = rng.normal(size=(3, 3, 6))
        patches[1, 2] = 0.5  # constant vector; exact mean keeps the residual at 0
        sm = similarity_map(patches, rng.normal(size=4), params)
        assert sm.zero_norm_patches == 1
        assert sm.raw[1, 2] == 0.0

    def test_zero_context_rejected(self):
        rng = np.random.default_rng(42)
        params = make_params(rng)
        with pytest.raises(ValidationError, match="zero norm"):
            similarity_map(rng.normal(size=(3, 3, 6)), np.zeros(4), params)


class TestMinmaxNormalize:
    def test_hand_case(self):
        got = minmax_normalize(np.array([[-0.5, 0.0], [0.25, 0.5]]))
        np.testing.assert_allclose(got, [[0.0, 0.5], [0.75, 1.0]])

    def test_constant_map_becomes_zeros(self):
        got = minmax_normalize(np.full((3, 3), 0.42))
        assert got.tobytes() == np.zeros((3, 3)).tobytes()

    def test_endpoints_exact(self):
        rng = np.random.default_rng(42)
        for _ in range(50):
            m = rng.normal(size=(4, 5))
            norm = minmax_normalize(m)
            assert norm.min() == 0.0
            assert norm.max() == 1.0


class TestBilinear:
    def test_hand_worked_two_by_two(self):
        """2x2 -> 4x4: outer rows/cols replicate the nearest source values,
        inner samples sit at 1/4 and 3/4 blends."""
        m = np.array([[0.0, 1.0], [0.5, 0.25]])
        want = np.array(
            [
                [0.0, 0.25, 0.75, 1.0],
                [0.125, 0.296875, 0.640625, 0.8125],
                [0.375, 0.390625, 0.421875, 0.4375],
                [0.5, 0.4375, 0.3125, 0.25],
            ]
        )
        np.testing.assert_allclose(upsample_bilinear(m, 4, 4), want, atol=1e-15)

    def test_constant_stays_exactly_constant(self):
        m = np.full((3, 3), 1.0 / 3.0)
        up = upsample_bilinear(m, 7, 11)
        assert np.all(up == 1.0 / 3.0)

    def test_same_size_is_identity(self):
        rng = np.random.default_rng(42)
        m = rng.normal(size=(5, 4))
        np.testing.assert_array_equal(upsample_bilinear(m, 5, 4), m)

    def test_matches_loop_reference(self):
        rng = np.random.default_rng(42)
        for _ in range(30):
            sh, sw = rng.integers(1, 7, size=2)
            height, width = rng.integers(1, 17, size=2)
            m = rng.normal(size=(int(sh), int(sw)))
            got = upsample_bilinear(m, int(height), int(width))
            np.testing.assert_allclose(
                got, loop_bilinear(m, int(height), int(width)), atol=1e-12
            )

    def test_bad_inputs(self):
        with pytest.raises(ValidationError, match="2-d"):
            upsample_bilinear(np.zeros(4), 2, 2)
        with pytest.raises(ValidationError, match="target size"):
            upsample_bilinear(np.zeros((2, 2)), 0, 4)


class TestNearest:
    def test_hand_cases(self):
        labels = np.array([[1, 2], [3, 4]], dtype=np.uint32)
        np.testing.assert_array_equal(
            upsample_nearest(labels, 4, 4),
            [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]],
        )
        np.testing.assert_array_equal(
            upsample_nearest(labels, 3, 3), [[1, 1, 2], [1, 1, 2], [3, 3, 4]]
        )

    def test_matches_index_formula(self):
        rng = np.random.default_rng(42)
        for _ in range(30):
            sh, sw = (int(v) for v in rng.integers(1, 8, size=2))
            height, width = (int(v) for v in rng.integers(1, 20, size=2))
            labels = rng.integers(0, 9, size=(sh, sw)).astype(np.uint32)
            got = upsample_nearest(labels, height, width)
            for i in range(height):
                for j in range(width):
                    assert got[i, j] == labels[(i * sh) // height, (j * sw) // width]

    def test_dtype_preserved(self):
        labels = np.array([[1]], dtype=np.uint32)
        assert upsample_nearest(labels, 3, 3).dtype == np.uint32

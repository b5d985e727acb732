import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import block_sum_loops
from skycount.density import (DensityMap, decode_dmap, default_radius, downsample_preserving_count,
                              encode_dmap, gaussian_kernel, generate_density_map, load_dmap,
                              preview_image, save_dmap, save_preview)
from skycount.errors import AnnotationError, FormatError, ShapeError


class TestKernel:
    def test_center_value(self):
        k = gaussian_kernel(15)
        assert k.shape == (121, 121) and default_radius(15) == 60
        assert k[60, 60] == pytest.approx(1 / (2 * math.pi * 225), rel=1e-12)
        assert k[60, 60] == pytest.approx(7.0736e-4, abs=1e-8)

    def test_symmetry(self):
        k = gaussian_kernel(2.5, 7)
        np.testing.assert_array_equal(k, k[::-1])
        np.testing.assert_array_equal(k, k[:, ::-1])
        np.testing.assert_array_equal(k, k.T)

    def test_mass_within_window(self):
        total = sum(math.exp(-(dx * dx + dy * dy) / 450) / (2 * math.pi * 225)
                    for dx in range(-60, 61) for dy in range(-60, 61))
        assert abs(gaussian_kernel(15).sum() - 1.0) <= 1e-3
        assert gaussian_kernel(15).sum() == pytest.approx(total, rel=1e-12)

    def test_bad_sigma(self):
        with pytest.raises(ValueError):
            gaussian_kernel(0)
        with pytest.raises(ValueError):
            gaussian_kernel(1.0, 0)


class TestGenerate:
    def test_empty(self):
        d = generate_density_map([], 20, 30)
        assert d.values.shape == (20, 30) and d.count == 0.0

    def test_single_center(self):
        d = generate_density_map([(100, 100)], 201, 201, 15)
        assert abs(d.count - 1.0) <= 1e-3
        assert np.unravel_index(d.values.argmax(), d.values.shape) == (100, 100)

    def test_two_points(self):
        d = generate_density_map([(70, 70), (200, 200)], 271, 271, 15)
        assert abs(d.count - 2.0) <= 2e-3

    def test_subpixel_matches_formula(self):
        d = generate_density_map([(10.3, 12.7)], 30, 30, 2.0)
        i, j = 13, 9
        expect = math.exp(-((j - 10.3) ** 2 + (i - 12.7) ** 2) / 8) / (8 * math.pi)
        assert d.values[i, j] == pytest.approx(expect, rel=1e-12)

    def test_border_mass_lost(self):
        d = generate_density_map([(0, 0)], 50, 50, 5)
        assert 0.2 < d.count < 0.35  # about a quarter survives, nothing is reflected

    def test_out_of_bounds(self):
        with pytest.raises(AnnotationError, match="#1"):
            generate_density_map([(1, 1), (30, 2)], 10, 30)
        with pytest.raises(AnnotationError):
            generate_density_map([(-0.5, 1)], 10, 30)

    def test_translation_equivariant(self):
        a = generate_density_map([(40.2, 41.7)], 100, 100, 4).values
        b = generate_density_map([(43.2, 39.7)], 100, 100, 4).values
        np.testing.assert_allclose(np.roll(np.roll(a, 3, axis=1), -2, axis=0), b, atol=1e-15)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.tuples(st.floats(20, 79.99), st.floats(20, 59.99)), max_size=6),
           st.tuples(st.floats(0, 99.99), st.floats(0, 79.99)))
    def test_interior_conservation_and_monotone(self, pts, extra):
        base = generate_density_map(pts, 80, 100, 5)
        assert abs(base.count - len(pts)) <= max(len(pts), 1) * 1e-3
        more = generate_density_map(pts + [extra], 80, 100, 5)
        assert np.all(more.values >= base.values)
        assert np.all(base.values >= 0)


class TestDownsample:
    def test_exact_conservation(self, rng):
        v = rng.uniform(size=(64, 48))
        d = DensityMap(v, 15.0, 1)
        out = downsample_preserving_count(d, 8)
        np.testing.assert_allclose(out.values, block_sum_loops(v, 8), rtol=1e-13)
        assert out.count == pytest.approx(d.count, rel=1e-14) and out.downsample == 8

    def test_exact_sum_on_dyadic(self, rng):
        v = rng.integers(0, 1000, size=(16, 24)) / 1024.0
        assert downsample_preserving_count(DensityMap(v, 1.0, 1)).values.sum() == v.sum()

    def test_uniform(self):
        out = downsample_preserving_count(DensityMap(np.full((16, 16), 0.5), 1.0, 1))
        np.testing.assert_array_equal(out.values, np.full((2, 2), 32.0))

    def test_indivisible(self):
        with pytest.raises(ShapeError):
            downsample_preserving_count(DensityMap(np.zeros((10, 16)), 1.0, 1))


class TestDmapFile:
    def test_roundtrip(self, tmp_path, rng):
        d = DensityMap(rng.uniform(size=(5, 7)).astype(np.float32).astype(np.float64), 15.0, 1)
        save_dmap(d, tmp_path / "a.dmap")
        back = load_dmap(tmp_path / "a.dmap")
        np.testing.assert_array_equal(back.values, d.values)
        assert back.sigma == 15.0
        assert encode_dmap(back) == (tmp_path / "a.dmap").read_bytes()
        assert len(encode_dmap(d)) == 16 + 4 * 35

    @pytest.mark.parametrize("cut", [0, 10, 20, -1])
    def test_truncated(self, cut):
        buf = encode_dmap(DensityMap(np.ones((3, 3)), 4.0, 1))
        with pytest.raises(FormatError):
            decode_dmap(buf[:cut] if cut >= 0 else buf + b"x")

    def test_bad_magic(self):
        buf = encode_dmap(DensityMap(np.ones((3, 3)), 4.0, 1))
        with pytest.raises(FormatError, match="magic"):
            decode_dmap(b"XMAP" + buf[4:])

    def test_preview(self, tmp_path):
        d = DensityMap(np.array([[0.0, 1.0], [2.0, 4.0]]), 1.0, 1)
        np.testing.assert_array_equal(preview_image(d), [[0, 64], [128, 255]])
        assert not preview_image(DensityMap(np.ones((2, 2)), 1.0, 1)).any()
        save_preview(d, tmp_path / "p.png")
        assert (tmp_path / "p.png").read_bytes()[:4] == b"\x89PNG"

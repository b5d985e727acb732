import numpy as np
import pytest

from skycount.annotations import PointRecord
from skycount.density import generate_density_map
from skycount.errors import AnnotationError, ShapeError
from skycount.transforms import (Sample, augment, crop, crop_nine, load_image, load_sample,
                                 mirror_flip, pad_to_multiple, quadrant_origins, resize_with_points,
                                 save_image, to_tensor_batch)


def _sample(rng, h=64, w=48, n=12, margin=0.5):
    pts = np.column_stack([rng.uniform(0, w - 1, n), rng.uniform(0, h - 1, n)])
    return Sample(rng.uniform(size=(h, w, 3)), pts, "img.png")


def test_sample_bounds_checked(rng):
    with pytest.raises(AnnotationError):
        Sample(np.zeros((4, 4, 3)), [[4.0, 1.0]])
    with pytest.raises(AnnotationError):
        Sample(np.zeros((4, 4, 3)), [], subset="planes")
    assert Sample(np.zeros((4, 4)), []).image.shape == (4, 4, 3)


class TestCrop:
    def test_nine_half_size(self, rng):
        s = Sample(np.zeros((512, 512, 3)), [])
        crops = crop_nine(s, rng)
        assert len(crops) == 9 and all(c.image.shape == (256, 256, 3) for c in crops)

    def test_quadrants_tile(self, rng):
        s = _sample(rng)
        cover = np.zeros((64, 48), dtype=int)
        for t, l in quadrant_origins(64, 48):
            cover[t:t + 32, l:l + 24] += 1
        assert np.all(cover == 1)
        quads = crop_nine(s, rng)[:4]
        top = np.concatenate([quads[0].image, quads[1].image], axis=1)
        bottom = np.concatenate([quads[2].image, quads[3].image], axis=1)
        np.testing.assert_array_equal(np.concatenate([top, bottom], axis=0), s.image)

    def test_quadrant_points_conserved(self, rng):
        pts = np.array([[3.5, 2.0], [30.2, 5.0], [10.0, 40.0], [47.0, 63.5], [23.9, 31.9]])
        s = Sample(np.zeros((64, 48, 3)), pts)
        assert sum(c.count for c in crop_nine(s, rng)[:4]) == len(pts)

    def test_seam_point_counted_once(self):
        s = Sample(np.zeros((8, 8, 3)), [[4.0, 4.0]])
        counts = [crop(s, t, l, 4, 4).count for t, l in quadrant_origins(8, 8)]
        assert counts == [0, 0, 0, 1]

    def test_points_translated_and_inside(self, rng):
        s = _sample(rng)
        for c in crop_nine(s, rng):
            assert np.all((c.points >= 0) & (c.points < [c.width, c.height]))
        c = crop(Sample(np.zeros((10, 10, 3)), [[7.5, 6.0]]), 5, 5, 5, 5)
        np.testing.assert_array_equal(c.points, [[2.5, 1.0]])

    def test_degenerate(self, rng):
        with pytest.raises(ShapeError):
            crop_nine(Sample(np.zeros((1, 5, 3)), []), rng)


class TestFlip:
    def test_involution(self, rng):
        s = _sample(rng)
        back = mirror_flip(mirror_flip(s))
        np.testing.assert_array_equal(back.image, s.image)
        np.testing.assert_allclose(back.points, s.points, atol=1e-12)

    def test_edge_point(self):
        s = Sample(np.zeros((4, 6, 3)), [[0.0, 1.0]])
        np.testing.assert_array_equal(mirror_flip(s).points, [[5.0, 1.0]])

    def test_pixels_reversed(self, rng):
        s = _sample(rng, 5, 7)
        out = mirror_flip(s).image
        for i in range(5):
            for j in range(7):
                np.testing.assert_array_equal(out[i, j], s.image[i, 6 - j])


class TestAugment:
    def test_counts(self, rng):
        assert len(augment([_sample(rng)], rng)) == 18
        assert len(augment([_sample(rng) for _ in range(10)], rng)) == 180

    def test_deterministic(self):
        s = _sample(np.random.default_rng(3))
        a = augment([s], np.random.default_rng(9))
        b = augment([s], np.random.default_rng(9))
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.image, y.image)
            np.testing.assert_array_equal(x.points, y.points)

    def test_pairs_are_flips(self, rng):
        out = augment([_sample(rng)], rng)
        for plain, flipped in zip(out[::2], out[1::2]):
            np.testing.assert_array_equal(mirror_flip(plain).image, flipped.image)


class TestResize:
    def test_large_image_scaled(self):
        s = Sample(np.zeros((1536, 2048, 3)), [[1024.0, 768.0], [2047.9, 1535.9]])
        out = resize_with_points(s)
        assert out.image.shape == (768, 1024, 3)
        np.testing.assert_array_equal(out.points[0], [512.0, 384.0])
        assert np.all(out.points < [1024, 768])

    def test_small_unchanged(self, rng):
        s = _sample(rng, 400, 500)
        assert resize_with_points(s) is s

    def test_constant(self):
        s = Sample(np.full((100, 300, 3), 0.4), [])
        out = resize_with_points(s, (150, 50))
        np.testing.assert_allclose(out.image, 0.4, atol=1e-6)


class TestPad:
    def test_pad_30(self, rng):
        s = _sample(rng, 30, 30)
        out = pad_to_multiple(s, 8)
        assert out.image.shape == (32, 32, 3) and out.pad == (2, 2)
        assert not out.image[30:].any() and not out.image[:, 30:].any()
        np.testing.assert_array_equal(out.points, s.points)
        a = generate_density_map(s.points, 30, 30, 3).count
        b = generate_density_map(out.points, 32, 32, 3).values[:30, :30].sum()
        assert a == pytest.approx(b, abs=1e-12)

    def test_already_multiple(self, rng):
        s = _sample(rng, 64, 64)
        assert pad_to_multiple(s) is s


def test_image_io_and_batch(tmp_path, rng):
    img = np.round(rng.uniform(size=(6, 5, 3)) * 255) / 255
    for ext in ("png", "ppm"):
        save_image(img, tmp_path / f"a.{ext}")
        np.testing.assert_allclose(load_image(tmp_path / f"a.{ext}"), img, atol=1e-12)
    s = load_sample(PointRecord("a.png", [[1.0, 2.0]]), tmp_path)
    assert s.id == "a" and s.count == 1
    assert to_tensor_batch([s, s]).shape == (2, 3, 6, 5)
    with pytest.raises(ShapeError):
        to_tensor_batch([s, _sample(rng)])


def test_pgm_golden(tmp_path):
    (tmp_path / "g.pgm").write_bytes(b"P5\n3 2\n255\n" + bytes([0, 51, 255, 102, 204, 153]))
    img = load_image(tmp_path / "g.pgm")
    assert img.shape == (2, 3, 3)
    np.testing.assert_allclose(img[:, :, 0], [[0.0, 0.2, 1.0], [0.4, 0.8, 0.6]])

import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from skycount.annotations import (PointRecord, QuadAnnotation, SplitManifest, centroid,
                                  count_statistics, format_manifest, parse_manifest,
                                  parse_pointfile, parse_quad_file, read_manifest, read_pointfile,
                                  write_manifest, write_pointfile)
from skycount.errors import AnnotationError, ParseError


class TestCentroid:
    @pytest.mark.parametrize("verts, expect", [
        (((0, 0), (2, 0), (2, 2), (0, 2)), (1, 1)),
        (((0, 0), (4, 0), (4, 2), (0, 2)), (2, 1)),
        (((1, 0), (2, 1), (1, 2), (0, 1)), (1, 1)),
    ])
    def test_fixtures(self, verts, expect):
        assert centroid(QuadAnnotation(verts)) == expect

    @settings(max_examples=50)
    @given(st.lists(st.tuples(st.integers(-1000, 1000), st.integers(-1000, 1000)),
                    min_size=4, max_size=4), st.integers(0, 3))
    def test_rotation_invariant(self, verts, k):
        verts = [(x / 4, y / 4) for x, y in verts]  # dyadic so sums are exact
        rotated = verts[k:] + verts[:k]
        assert centroid(QuadAnnotation(verts)) == centroid(QuadAnnotation(rotated))

    def test_non_finite(self):
        with pytest.raises(AnnotationError):
            centroid(QuadAnnotation(((0, 0), (1, float("nan")), (1, 1), (0, 1))))


class TestQuadFile:
    def test_well_formed(self):
        res = parse_quad_file("10 20 30 20 30 40 10 40 small-vehicle 1\n")
        assert len(res.quads) == 1 and not res.rejects
        q = res.quads[0]
        assert q.label == "small-vehicle" and q.difficult == 1
        assert centroid(q) == (20.0, 30.0)

    def test_seven_numbers_rejected(self):
        res = parse_quad_file("1 2 3 4 5 6 7 ship 0\n")
        assert not res.quads and res.rejects[0].line == 1
        assert "line 1" in str(res.rejects[0])

    def test_mixed_file_with_metadata(self):
        text = ("imagesource:GoogleEarth\ngsd:0.146\n"
                "0 0 2 0 2 2 0 2 ship 0\n"
                "1 1 3 1 3 3 1 3 ship 0\n"
                "bad line here\n"
                "4 4 6 4 6 6 4 6 ship 1\n")
        res = parse_quad_file(text)
        assert len(res.quads) == 3 and len(res.rejects) == 1
        assert res.rejects[0].line == 5

    def test_clip_warns(self, caplog):
        res = parse_quad_file("-2 0 12 0 12 5 -2 5 ship 0\n", image_size=(8, 10))
        xs = [v[0] for v in res.quads[0].vertices]
        assert min(xs) == 0.0 and max(xs) == 9.0
        assert "clipped" in caplog.text


class TestPointFile:
    def test_roundtrip_exact(self, tmp_path):
        pts = np.array([[0.1, 1 / 3], [123.456789012345678, 2.0 ** -30], [5e-17, 7.0]])
        write_pointfile([PointRecord("a.png", pts), PointRecord("b.png", [])], tmp_path / "p.txt")
        back = read_pointfile(tmp_path / "p.txt")
        np.testing.assert_array_equal(back[0].points, pts)
        assert back[1].count == 0 and back[1].points.shape == (0, 2)

    @settings(max_examples=40)
    @given(st.lists(st.tuples(st.floats(0, 1e6), st.floats(0, 1e6)), max_size=10))
    def test_roundtrip_property(self, pts):
        text = json.dumps({"image": "x.png", "points": [list(p) for p in pts]})
        rec = parse_pointfile(text)[0]
        again = parse_pointfile(json.dumps({"image": "x.png", "points": rec.points.tolist()}))[0]
        np.testing.assert_array_equal(again.points, rec.points)
        np.testing.assert_array_equal(rec.points.reshape(-1, 2), np.array(pts).reshape(-1, 2))

    def test_2468_records(self, tmp_path):
        rng = np.random.default_rng(0)
        recs = [PointRecord(f"img_{i:04d}.png", rng.uniform(0, 512, size=(int(rng.integers(0, 20)), 2)))
                for i in range(2468)]
        write_pointfile(recs, tmp_path / "building.txt")
        assert len(read_pointfile(tmp_path / "building.txt")) == 2468

    @pytest.mark.parametrize("line", [
        "{not json", '{"points": []}', '{"image": "a", "points": [[1]]}',
        '{"image": "a", "points": [[1, "x"]]}', '{"image": "a", "points": [[1, NaN]]}',
    ])
    def test_malformed_line_number(self, line):
        good = '{"image": "ok.png", "points": []}'
        with pytest.raises(ParseError) as err:
            parse_pointfile(good + "\n" + line + "\n")
        assert err.value.line == 2 and str(err.value).startswith("line 2:")


class TestManifest:
    def test_roundtrip(self, tmp_path):
        m = SplitManifest([("a", "train"), ("b", "test"), ("c", "train")])
        write_manifest(m, tmp_path / "split.txt")
        assert (tmp_path / "split.txt").read_text() == "a\ttrain\nb\ttest\nc\ttrain\n"
        back = read_manifest(tmp_path / "split.txt")
        assert back.entries == m.entries and back.counts() == (2, 1)
        assert format_manifest(back) == format_manifest(m)

    def test_building_split_counts(self):
        m = SplitManifest([(f"b{i}", "train" if i < 1205 else "test") for i in range(2468)])
        assert m.counts() == (1205, 1263)

    @pytest.mark.parametrize("text, line", [
        ("a\ttrain\nb\tval\n", 2), ("a\ttrain\na\ttest\n", 2), ("a train\n", 1)])
    def test_errors(self, text, line):
        with pytest.raises(ParseError) as err:
            parse_manifest(text)
        assert err.value.line == line

    def test_direct_validation(self):
        with pytest.raises(AnnotationError):
            SplitManifest([("a", "train"), ("a", "test")])


def test_count_statistics():
    stats = count_statistics([2, 5, 11])
    assert stats == {"images": 3, "total": 18, "min": 2, "average": 6.0, "max": 11}
    with pytest.raises(AnnotationError):
        count_statistics([])

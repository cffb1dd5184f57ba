import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from distildoc.errors import DomainError
from distildoc.geometry import (
    BBox,
    LayoutRegion,
    corner_distance,
    fully_contains,
    interpolate_bbox,
    iou,
    standardize_bbox,
)

coord = st.floats(0, 1000, allow_nan=False)


@st.composite
def boxes(draw):
    x1, y1 = draw(coord), draw(coord)
    return BBox(x1, y1, x1 + draw(st.floats(0.5, 300)), y1 + draw(st.floats(0.5, 300)))


class TestStandardize:
    def test_xywh(self):
        assert standardize_bbox([1, 2, 3, 4], "xywh") == BBox(1, 2, 4, 6)

    def test_unordered_xyxy(self):
        assert standardize_bbox([10, 8, 2, 3]) == BBox(2, 3, 10, 8)

    def test_negative_extent(self):
        with pytest.raises(DomainError):
            standardize_bbox([0, 0, -1, 2], "xywh")

    def test_bad_arity_and_format(self):
        with pytest.raises(DomainError):
            standardize_bbox([0, 0, 1])
        with pytest.raises(DomainError):
            standardize_bbox([0, 0, 1, 1], "cxcywh")


class TestIou:
    def test_half_overlap(self):
        assert abs(iou(BBox(0, 0, 10, 10), BBox(5, 0, 15, 10)) - 1 / 3) <= 1e-12

    def test_disjoint(self):
        assert iou(BBox(0, 0, 1, 1), BBox(2, 2, 3, 3)) == 0.0

    def test_touching_edges(self):
        assert iou(BBox(0, 0, 1, 1), BBox(1, 0, 2, 1)) == 0.0

    def test_degenerate(self):
        assert iou(BBox(0, 0, 0, 0), BBox(0, 0, 0, 0)) == 0.0

    @given(boxes(), boxes())
    def test_symmetric_and_bounded(self, a, b):
        assert iou(a, b) == iou(b, a)
        assert 0.0 <= iou(a, b) <= 1.0

    @given(boxes())
    def test_self_is_one(self, a):
        assert iou(a, a) == pytest.approx(1.0, abs=1e-12)

    @given(boxes(), st.floats(0, 1), st.floats(0, 1), st.floats(0.1, 1), st.floats(0.1, 1))
    def test_contained_is_area_ratio(self, outer, fx, fy, fw, fh):
        w, h = outer.width * fw, outer.height * fh
        x1 = outer.x1 + (outer.width - w) * fx
        y1 = outer.y1 + (outer.height - h) * fy
        inner = BBox(x1, y1, min(x1 + w, outer.x2), min(y1 + h, outer.y2))
        assert iou(outer, inner) == pytest.approx(inner.area / outer.area, rel=1e-9, abs=1e-12)


class TestContainment:
    def test_boundary_inclusive(self):
        assert fully_contains(BBox(0, 0, 10, 10), BBox(0, 0, 10, 10))

    def test_sticking_out(self):
        assert not fully_contains(BBox(0, 0, 10, 10), BBox(5, 5, 11, 9))


class TestInterpolate:
    def test_double_size(self):
        assert interpolate_bbox(BBox(1, 2, 3, 4), (10, 10), (20, 40)) == BBox(2, 8, 6, 16)

    def test_zero_dims(self):
        with pytest.raises(DomainError):
            interpolate_bbox(BBox(0, 0, 1, 1), (0, 10), (10, 10))

    @given(boxes(), st.floats(50, 5000), st.floats(50, 5000), st.floats(50, 5000), st.floats(50, 5000))
    def test_round_trip(self, b, w1, h1, w2, h2):
        back = interpolate_bbox(interpolate_bbox(b, (w1, h1), (w2, h2)), (w2, h2), (w1, h1))
        np.testing.assert_allclose(back.as_list(), b.as_list(), atol=1e-9)


class TestCornerDistance:
    def test_l1_and_l2(self):
        r, t = BBox(0, 0, 10, 10), BBox(3, 4, 5, 6)
        assert corner_distance(r, t, "top_left") == 7
        assert corner_distance(r, t, "top_left", "L2") == 5
        assert corner_distance(r, t, "bottom_right") == 9

    def test_unknown_options(self):
        with pytest.raises(DomainError):
            corner_distance(BBox(0, 0, 1, 1), BBox(0, 0, 1, 1), "center")
        with pytest.raises(DomainError):
            corner_distance(BBox(0, 0, 1, 1), BBox(0, 0, 1, 1), norm="Linf")

    @given(boxes(), boxes(), boxes(), st.sampled_from(["L1", "L2"]))
    def test_metric_axioms(self, a, b, c, norm):
        d = lambda u, v: corner_distance(u, v, "top_left", norm)  # noqa: E731
        assert d(a, a) == 0
        assert d(a, b) == d(b, a) >= 0
        assert d(a, c) <= d(a, b) + d(b, c) + 1e-9

    @given(boxes(), st.lists(boxes(), min_size=1, max_size=10))
    def test_min_agrees_with_exhaustive_scan(self, region, toks):
        chosen = min(range(len(toks)), key=lambda t: corner_distance(region, toks[t]))
        for t, b in enumerate(toks):
            assert corner_distance(region, toks[chosen]) <= corner_distance(region, b)
            if t < chosen:
                assert corner_distance(region, b) > corner_distance(region, toks[chosen])


def test_region_needs_label():
    with pytest.raises(DomainError):
        LayoutRegion(BBox(0, 0, 1, 1), "")

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from radartrl.geometry import (
    OrientedBox, axis_aligned_iou, box_corners, monte_carlo_iou, normalize_angle,
    oriented_nms, polygon_area, rotated_iou,
)


def test_identical_boxes_iou_one():
    b = OrientedBox(10, 10, 4, 8, 30)
    assert rotated_iou(b, b) == pytest.approx(1.0, abs=1e-12)


def test_disjoint_boxes_iou_zero():
    assert rotated_iou(OrientedBox(0, 0, 2, 2), OrientedBox(10, 10, 2, 2)) == 0.0


def test_half_overlap_axis_aligned():
    # 2x2 boxes offset by 1 along x: intersection 2, union 6
    a, b = OrientedBox(0, 0, 2, 2), OrientedBox(1, 0, 2, 2)
    assert rotated_iou(a, b) == pytest.approx(1 / 3, abs=1e-12)


def test_square_rotated_45_inside_circumscribing_square():
    # a 45-degree unit-area diamond inside a 2x2 square touching its edge midpoints
    outer = OrientedBox(0, 0, 2, 2)
    inner = OrientedBox(0, 0, math.sqrt(2), math.sqrt(2), 45)
    assert rotated_iou(outer, inner) == pytest.approx(0.5, abs=1e-12)


def test_corners_ccw_and_length_along_x():
    b = OrientedBox(5, 5, 2, 6, 0)
    corners = box_corners(b)
    assert polygon_area(corners) == pytest.approx(12.0)
    xs = [c[0] for c in corners]
    assert max(xs) - min(xs) == pytest.approx(6.0)


def test_theta_normalized():
    assert OrientedBox(0, 0, 1, 2, -90).theta == 270.0
    assert OrientedBox(0, 0, 1, 2, 720).theta == 0.0
    assert normalize_angle(-1e-17) == 0.0


def test_nonpositive_extent_rejected():
    with pytest.raises(ValueError):
        OrientedBox(0, 0, 0, 2)


def test_iou_180_rotation_symmetric():
    a = OrientedBox(3, 4, 3, 7, 20)
    b = OrientedBox(4, 4, 2, 5, 75)
    flipped = OrientedBox(a.cx, a.cy, a.w, a.l, a.theta + 180)
    assert rotated_iou(a, b) == pytest.approx(rotated_iou(flipped, b), abs=1e-12)


def test_axis_aligned_matches_closed_form():
    rng = np.random.default_rng(5)
    for _ in range(200):
        a = OrientedBox(*rng.uniform(0, 10, 2), *rng.uniform(0.5, 6, 2), 0)
        b = OrientedBox(*rng.uniform(0, 10, 2), *rng.uniform(0.5, 6, 2), rng.choice([0, 180]))
        assert abs(rotated_iou(a, b) - axis_aligned_iou(a, b)) < 1e-9


def test_rotated_iou_against_monte_carlo_small():
    rng = np.random.default_rng(11)
    for _ in range(5):
        a = OrientedBox(*rng.uniform(8, 12, 2), *rng.uniform(2, 6, 2), rng.uniform(0, 360))
        b = OrientedBox(*rng.uniform(8, 12, 2), *rng.uniform(2, 6, 2), rng.uniform(0, 360))
        assert abs(rotated_iou(a, b) - monte_carlo_iou(a, b, 200_000, rng)) < 0.01


box_strategy = st.builds(
    OrientedBox,
    st.floats(-20, 20), st.floats(-20, 20), st.floats(0.5, 10), st.floats(0.5, 10), st.floats(0, 360),
)


@settings(max_examples=200, deadline=None)
@given(box_strategy, box_strategy)
def test_iou_symmetric_and_bounded(a, b):
    ab, ba = rotated_iou(a, b), rotated_iou(b, a)
    assert 0.0 <= ab <= 1.0
    assert ab == pytest.approx(ba, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(box_strategy, st.floats(-30, 30), st.floats(-30, 30))
def test_iou_translation_invariant(a, dx, dy):
    b = OrientedBox(a.cx + 1.3, a.cy - 0.7, a.l, a.w, a.theta + 33)
    base = rotated_iou(a, b)
    assert rotated_iou(a.translated(dx, dy), b.translated(dx, dy)) == pytest.approx(base, abs=1e-9)


def test_nms_suppresses_overlap_keeps_far():
    a = OrientedBox(10, 10, 4, 8)
    near = OrientedBox(10.5, 10, 4, 8)
    far = OrientedBox(40, 40, 4, 8)
    kept = oriented_nms([(near, 0.8), (a, 0.9), (far, 0.5)], 0.1)
    assert [k[0] for k in kept] == [a, far]


def test_nms_threshold_is_inclusive_keep():
    # IoU exactly 1/3 is kept when the threshold is 1/3
    a, b = OrientedBox(0, 0, 2, 2), OrientedBox(1, 0, 2, 2)
    assert len(oriented_nms([(a, 0.9), (b, 0.8)], 1 / 3 + 1e-12)) == 2
    assert len(oriented_nms([(a, 0.9), (b, 0.8)], 0.3)) == 1


def test_nms_keeps_extra_fields():
    kept = oriented_nms([(OrientedBox(0, 0, 1, 1), 0.5, "tag")])
    assert kept[0][2] == "tag"

"""Oriented-box geometry: corners, polygon clipping, rotated IoU and NMS.

Angles are in degrees.  At ``theta == 0`` the box length runs along the image
+x axis and the width along +y.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def normalize_angle(theta):
    t = math.fmod(float(theta), 360.0)
    if t < 0:
        t += 360.0
    # fmod of a tiny negative can round up to exactly 360
    return 0.0 if t >= 360.0 else t


@dataclass(frozen=True)
class OrientedBox:
    cx: float
    cy: float
    w: float
    l: float
    theta: float = 0.0

    def __post_init__(self):
        if not (self.w > 0 and self.l > 0):
            raise ValueError(f"box extents must be positive, got w={self.w}, l={self.l}")
        object.__setattr__(self, "theta", normalize_angle(self.theta))

    @property
    def area(self):
        return self.w * self.l

    def translated(self, dx, dy):
        return OrientedBox(self.cx + dx, self.cy + dy, self.w, self.l, self.theta)

    def as_tuple(self):
        return (self.cx, self.cy, self.w, self.l, self.theta)


def box_corners(box):
    """Four vertices in counter-clockwise order (positive shoelace area)."""
    t = math.radians(box.theta)
    c, s = math.cos(t), math.sin(t)
    hl, hw = box.l / 2.0, box.w / 2.0
    local = ((hl, -hw), (hl, hw), (-hl, hw), (-hl, -hw))
    return [(box.cx + u * c - v * s, box.cy + u * s + v * c) for u, v in local]


def polygon_area(poly):
    """Signed shoelace area; positive for counter-clockwise vertex order."""
    n = len(poly)
    if n < 3:
        return 0.0
    acc = 0.0
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        acc += x0 * y1 - x1 * y0
    return 0.5 * acc


def _cross(a, b, p):
    return (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])


def clip_polygon(subject, clipper):
    """Sutherland-Hodgman clip of ``subject`` by the convex CCW polygon ``clipper``."""
    output = list(subject)
    n = len(clipper)
    for i in range(n):
        if not output:
            break
        a, b = clipper[i], clipper[(i + 1) % n]
        inp, output = output, []
        prev = inp[-1]
        d_prev = _cross(a, b, prev)
        for cur in inp:
            d_cur = _cross(a, b, cur)
            if d_cur >= 0:
                if d_prev < 0:
                    output.append(_intersect(prev, cur, d_prev, d_cur))
                output.append(cur)
            elif d_prev >= 0 and d_prev != 0:
                output.append(_intersect(prev, cur, d_prev, d_cur))
            prev, d_prev = cur, d_cur
    return output


def _intersect(p, q, dp, dq):
    t = dp / (dp - dq)
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


def intersection_area(a, b):
    ca, cb = box_corners(a), box_corners(b)
    # cheap reject on circumscribed circles
    ra = 0.5 * math.hypot(a.w, a.l)
    rb = 0.5 * math.hypot(b.w, b.l)
    if math.hypot(a.cx - b.cx, a.cy - b.cy) >= ra + rb:
        return 0.0
    return max(polygon_area(clip_polygon(ca, cb)), 0.0)


def rotated_iou(a, b):
    inter = intersection_area(a, b)
    if inter <= 0.0:
        return 0.0
    union = a.area + b.area - inter
    return min(max(inter / union, 0.0), 1.0)


def axis_aligned_iou(a, b):
    """Closed-form IoU for boxes with theta == 0 (length along x)."""
    ax0, ax1 = a.cx - a.l / 2, a.cx + a.l / 2
    ay0, ay1 = a.cy - a.w / 2, a.cy + a.w / 2
    bx0, bx1 = b.cx - b.l / 2, b.cx + b.l / 2
    by0, by1 = b.cy - b.w / 2, b.cy + b.w / 2
    iw = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    ih = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def points_in_box(box, xs, ys):
    """Boolean mask of which points (arrays) fall inside ``box``."""
    t = math.radians(box.theta)
    dx, dy = xs - box.cx, ys - box.cy
    u = dx * math.cos(t) + dy * math.sin(t)
    v = -dx * math.sin(t) + dy * math.cos(t)
    return (np.abs(u) <= box.l / 2) & (np.abs(v) <= box.w / 2)


def monte_carlo_iou(a, b, n=1_000_000, rng=None):
    """IoU estimate from uniform samples over the joint bounding rectangle."""
    rng = np.random.default_rng(0) if rng is None else rng
    pts = np.array(box_corners(a) + box_corners(b))
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    xs = rng.uniform(lo[0], hi[0], n)
    ys = rng.uniform(lo[1], hi[1], n)
    ina, inb = points_in_box(a, xs, ys), points_in_box(b, xs, ys)
    union = np.count_nonzero(ina | inb)
    return np.count_nonzero(ina & inb) / union if union else 0.0


def oriented_nms(dets, iou_thresh=0.1):
    """Greedy NMS over ``(box, confidence)`` pairs; returns survivors in keep order."""
    order = sorted(range(len(dets)), key=lambda i: -dets[i][1])
    kept = []
    for i in order:
        box = dets[i][0]
        if all(rotated_iou(box, dets[j][0]) <= iou_thresh for j in kept):
            kept.append(i)
    return [dets[i] for i in kept]

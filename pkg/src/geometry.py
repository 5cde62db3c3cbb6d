"""Bounding boxes, points and the geometric kernels used by the cost builders.

Boxes are held in normalized center-size form (cx, cy, w, h). Corner and
pixel forms only appear at the file boundaries. The pairwise kernels work on
(N, 4) arrays of center-size boxes; the scalar functions call them so both
paths give the same numbers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from src.exceptions import GeometryError

# Boxes thinner than this (normalized units) are rejected.
MIN_SIDE = 1e-6
# Overshoot below this is rounding and is left alone.
CLAMP_SLACK = 1e-12


@dataclass(frozen=True)
class BoundingBox:
    """One object's extent in normalized center-size coordinates."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        values = (self.cx, self.cy, self.w, self.h)
        if not all(math.isfinite(v) for v in values):
            raise GeometryError(f"Box coordinates must be finite: {values}")
        if self.w < MIN_SIDE or self.h < MIN_SIDE:
            raise GeometryError(
                f"Box sides must be at least {MIN_SIDE}: w={self.w}, "
                f"h={self.h}")

    @classmethod
    def from_xyxy(cls, x_min, y_min, x_max, y_max, clamp=True):
        """Build a box from normalized corners, clamped into the image."""
        if clamp:
            x_min, x_max = min(max(x_min, 0.0), 1.0), min(max(x_max, 0.0), 1.0)
            y_min, y_max = min(max(y_min, 0.0), 1.0), min(max(y_max, 0.0), 1.0)
        return cls((x_min + x_max) / 2, (y_min + y_max) / 2,
                   x_max - x_min, y_max - y_min)

    @classmethod
    def from_pixel_xyxy(cls, x_min, y_min, x_max, y_max, width, height):
        return cls.from_xyxy(x_min / width, y_min / height,
                             x_max / width, y_max / height)

    @classmethod
    def from_pixel_xywh(cls, x, y, w, h, width, height):
        """Build a box from a COCO [x, y, w, h] pixel box (top-left origin)."""
        return cls.from_pixel_xyxy(x, y, x + w, y + h, width, height)

    @classmethod
    def from_array(cls, row):
        cx, cy, w, h = (float(v) for v in row)
        return cls(cx, cy, w, h)

    def to_xyxy(self):
        return (self.cx - self.w / 2, self.cy - self.h / 2,
                self.cx + self.w / 2, self.cy + self.h / 2)

    def to_pixel_xywh(self, width, height):
        x_min, y_min, x_max, y_max = self.to_xyxy()
        return (x_min * width, y_min * height,
                (x_max - x_min) * width, (y_max - y_min) * height)

    def to_array(self):
        return np.array([self.cx, self.cy, self.w, self.h], dtype=float)

    def clamped(self):
        """Return the box with its corners clamped into [0, 1]."""
        return BoundingBox.from_xyxy(*self.to_xyxy(), clamp=True)

    @property
    def area(self):
        return self.w * self.h


@dataclass(frozen=True)
class Point2D:
    """A point in normalized image coordinates."""

    px: float
    py: float

    def __post_init__(self):
        for v in (self.px, self.py):
            if not (math.isfinite(v) and 0.0 <= v <= 1.0):
                raise GeometryError(
                    f"Point coordinates must lie in [0, 1]: "
                    f"({self.px}, {self.py})")

    def to_array(self):
        return np.array([self.px, self.py], dtype=float)


def boxes_to_array(boxes):
    """Stack BoundingBox objects into an (N, 4) center-size array."""
    if len(boxes) == 0:
        return np.zeros((0, 4), dtype=float)
    return np.array([[b.cx, b.cy, b.w, b.h] for b in boxes], dtype=float)


def points_to_array(points):
    if len(points) == 0:
        return np.zeros((0, 2), dtype=float)
    return np.array([[p.px, p.py] for p in points], dtype=float)


def validate_box_array(boxes):
    """Check an (N, 4) center-size array and return it as float."""
    boxes = np.asarray(boxes, dtype=float)
    if boxes.ndim != 2 or boxes.shape[1] != 4:
        raise GeometryError(f"Expected an (N, 4) box array, got {boxes.shape}")
    if not np.isfinite(boxes).all():
        raise GeometryError("Box coordinates must be finite")
    if (boxes[:, 2:] < MIN_SIDE).any():
        raise GeometryError(f"Box sides must be at least {MIN_SIDE}")
    return boxes


def cxcywh_to_xyxy(boxes):
    boxes = np.asarray(boxes, dtype=float)
    cx, cy, w, h = boxes[..., 0], boxes[..., 1], boxes[..., 2], boxes[..., 3]
    return np.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], axis=-1)


def xyxy_to_cxcywh(boxes):
    boxes = np.asarray(boxes, dtype=float)
    x0, y0, x1, y1 = boxes[..., 0], boxes[..., 1], boxes[..., 2], boxes[..., 3]
    return np.stack([(x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0], axis=-1)


def clamp_box_array(boxes):
    """Clamp the corners of an (N, 4) center-size array into the image.

    Rows inside [0, 1], up to rounding, come back untouched so that clamping
    twice changes nothing. A row that keeps no extent after clamping lies
    outside the image and raises GeometryError.
    """
    boxes = validate_box_array(boxes)
    corners = cxcywh_to_xyxy(boxes)
    outside = ((corners < -CLAMP_SLACK)
               | (corners > 1 + CLAMP_SLACK)).any(axis=1)
    if not outside.any():
        return boxes
    clamped = boxes.copy()
    clamped[outside] = xyxy_to_cxcywh(np.clip(corners[outside], 0.0, 1.0))
    if (clamped[:, 2:] < MIN_SIDE).any():
        raise GeometryError("Box lies outside the image")
    return clamped


def _intersection_and_union(a, b):
    a_xy = cxcywh_to_xyxy(a)
    b_xy = cxcywh_to_xyxy(b)
    area_a = a[:, 2] * a[:, 3]
    area_b = b[:, 2] * b[:, 3]

    lt = np.maximum(a_xy[:, None, :2], b_xy[None, :, :2])
    rb = np.minimum(a_xy[:, None, 2:], b_xy[None, :, 2:])
    wh = np.clip(rb - lt, 0.0, None)
    inter = wh[..., 0] * wh[..., 1]
    union = area_a[:, None] + area_b[None, :] - inter
    return inter, union, a_xy, b_xy


def pairwise_iou(a, b):
    """IoU between every box of ``a`` (N, 4) and ``b`` (M, 4) -> (N, M)."""
    a = np.asarray(a, dtype=float).reshape(-1, 4)
    b = np.asarray(b, dtype=float).reshape(-1, 4)
    inter, union, _, _ = _intersection_and_union(a, b)
    return inter / union


def pairwise_giou(a, b):
    """Generalized IoU between every pair of boxes -> (N, M) in [-1, 1]."""
    a = np.asarray(a, dtype=float).reshape(-1, 4)
    b = np.asarray(b, dtype=float).reshape(-1, 4)
    inter, union, a_xy, b_xy = _intersection_and_union(a, b)
    iou = inter / union

    # smallest enclosing box
    lt = np.minimum(a_xy[:, None, :2], b_xy[None, :, :2])
    rb = np.maximum(a_xy[:, None, 2:], b_xy[None, :, 2:])
    wh = np.clip(rb - lt, 0.0, None)
    enclosing = wh[..., 0] * wh[..., 1]
    return iou - (enclosing - union) / enclosing


def pairwise_l1(a, b):
    """Sum of absolute center-size differences for every pair -> (N, M)."""
    a = np.asarray(a, dtype=float).reshape(-1, 4)
    b = np.asarray(b, dtype=float).reshape(-1, 4)
    return np.abs(a[:, None, :] - b[None, :, :]).sum(axis=-1)


def pairwise_center_distance(points, boxes):
    """Euclidean distance from every point (G, 2) to every box center (K, 4)."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    boxes = np.asarray(boxes, dtype=float).reshape(-1, 4)
    diff = points[:, None, :] - boxes[None, :, :2]
    return np.hypot(diff[..., 0], diff[..., 1])


def pairwise_contains(points, boxes):
    """Closed-interval containment of every point (G, 2) in every box (K, 4)."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    xy = cxcywh_to_xyxy(np.asarray(boxes, dtype=float).reshape(-1, 4))
    px = points[:, None, 0]
    py = points[:, None, 1]
    return ((xy[None, :, 0] <= px) & (px <= xy[None, :, 2])
            & (xy[None, :, 1] <= py) & (py <= xy[None, :, 3]))


def iou(a: BoundingBox, b: BoundingBox) -> float:
    return float(pairwise_iou(a.to_array(), b.to_array())[0, 0])


def giou(a: BoundingBox, b: BoundingBox) -> float:
    return float(pairwise_giou(a.to_array(), b.to_array())[0, 0])


def l1_box(a: BoundingBox, b: BoundingBox) -> float:
    return float(pairwise_l1(a.to_array(), b.to_array())[0, 0])


def center_distance(p: Point2D, b: BoundingBox) -> float:
    return float(pairwise_center_distance(p.to_array(), b.to_array())[0, 0])


def contains(b: BoundingBox, p: Point2D) -> bool:
    return bool(pairwise_contains(p.to_array(), b.to_array())[0, 0])

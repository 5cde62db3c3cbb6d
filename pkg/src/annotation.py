"""Omni-label formats, downgrading full labels and weak-label simulators.

An omni-label is one of the weak annotation formats a partially labeled image
can carry. ``downgrade`` turns a full annotation into any of them; points are
sampled uniformly inside each box and extreme-clicking boxes are simulated by
adding Gaussian noise to the box corners.
"""
from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, replace
from enum import Enum
from typing import ClassVar

import numpy as np

from src.exceptions import CalibrationError, LabelError
from src.geometry import (MIN_SIDE, BoundingBox, Point2D, boxes_to_array,
                          cxcywh_to_xyxy, validate_box_array, xyxy_to_cxcywh)

logger = logging.getLogger(__name__)


class LabelFormat(str, Enum):
    NONE = "none"
    TAGS_U = "tags_u"
    TAGS_K = "tags_k"
    POINTS_U = "points_u"
    POINTS_K = "points_k"
    BOXES_U = "boxes_u"
    BOXES_EC = "boxes_ec"
    FULLY = "fully"

    @classmethod
    def parse(cls, value):
        try:
            return cls(value)
        except ValueError:
            names = ", ".join(f.value for f in cls)
            raise LabelError(f"Unknown label format '{value}' "
                             f"(expected one of {names})")


WEAK_FORMATS = (LabelFormat.TAGS_U, LabelFormat.TAGS_K, LabelFormat.POINTS_U,
                LabelFormat.POINTS_K, LabelFormat.BOXES_U,
                LabelFormat.BOXES_EC)


def _check_class_id(class_id, num_classes=None):
    if isinstance(class_id, bool) or not isinstance(class_id,
                                                    (int, np.integer)):
        raise LabelError(f"Class ids must be integers, got {class_id!r}")
    if class_id < 0 or (num_classes is not None and class_id >= num_classes):
        raise LabelError(f"Class id {class_id} outside [0, {num_classes})")
    return int(class_id)


@dataclass(frozen=True)
class OmniLabel:
    """Base of the omni-label variants."""

    format: ClassVar[LabelFormat]

    @property
    def size(self):
        """Number of ground-truth entities G carried by the label."""
        return 0

    def class_ids(self):
        return ()

    def validate(self, num_classes):
        for class_id in self.class_ids():
            _check_class_id(class_id, num_classes)
        return self


@dataclass(frozen=True)
class NoneLabel(OmniLabel):
    format: ClassVar[LabelFormat] = LabelFormat.NONE


@dataclass(frozen=True)
class TagsU(OmniLabel):
    classes: tuple = ()
    format: ClassVar[LabelFormat] = LabelFormat.TAGS_U

    def __post_init__(self):
        classes = tuple(_check_class_id(c) for c in self.classes)
        if len(set(classes)) != len(classes):
            raise LabelError(f"TagsU classes must be unique: {classes}")
        object.__setattr__(self, "classes", classes)

    @property
    def size(self):
        return len(self.classes)

    def class_ids(self):
        return self.classes


@dataclass(frozen=True)
class TagsK(OmniLabel):
    pairs: tuple = ()
    format: ClassVar[LabelFormat] = LabelFormat.TAGS_K

    def __post_init__(self):
        pairs = tuple((_check_class_id(c), int(n)) for c, n in self.pairs)
        classes = [c for c, _ in pairs]
        if len(set(classes)) != len(classes):
            raise LabelError(f"TagsK classes must be unique: {classes}")
        if any(n < 1 for _, n in pairs):
            raise LabelError(f"TagsK counts must be at least 1: {pairs}")
        object.__setattr__(self, "pairs", pairs)

    @property
    def classes(self):
        return tuple(c for c, _ in self.pairs)

    @property
    def counts(self):
        return tuple(n for _, n in self.pairs)

    @property
    def size(self):
        return sum(self.counts)

    def class_ids(self):
        return self.classes


@dataclass(frozen=True)
class PointsU(OmniLabel):
    points: tuple = ()
    format: ClassVar[LabelFormat] = LabelFormat.POINTS_U

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(self.points))

    @property
    def size(self):
        return len(self.points)


@dataclass(frozen=True)
class PointsK(OmniLabel):
    pairs: tuple = ()
    format: ClassVar[LabelFormat] = LabelFormat.POINTS_K

    def __post_init__(self):
        pairs = tuple((p, _check_class_id(c)) for p, c in self.pairs)
        object.__setattr__(self, "pairs", pairs)

    @property
    def points(self):
        return tuple(p for p, _ in self.pairs)

    @property
    def classes(self):
        return tuple(c for _, c in self.pairs)

    @property
    def size(self):
        return len(self.pairs)

    def class_ids(self):
        return self.classes


@dataclass(frozen=True)
class BoxesU(OmniLabel):
    boxes: tuple = ()
    format: ClassVar[LabelFormat] = LabelFormat.BOXES_U

    def __post_init__(self):
        object.__setattr__(self, "boxes", tuple(self.boxes))

    @property
    def size(self):
        return len(self.boxes)


@dataclass(frozen=True)
class BoxesEC(BoxesU):
    format: ClassVar[LabelFormat] = LabelFormat.BOXES_EC


@dataclass(frozen=True)
class Fully(OmniLabel):
    pairs: tuple = ()
    format: ClassVar[LabelFormat] = LabelFormat.FULLY

    def __post_init__(self):
        pairs = tuple((b, _check_class_id(c)) for b, c in self.pairs)
        object.__setattr__(self, "pairs", pairs)

    @property
    def boxes(self):
        return tuple(b for b, _ in self.pairs)

    @property
    def classes(self):
        return tuple(c for _, c in self.pairs)

    @property
    def size(self):
        return len(self.pairs)

    def class_ids(self):
        return self.classes


LABEL_TYPES = {cls.format: cls for cls in
               (NoneLabel, TagsU, TagsK, PointsU, PointsK, BoxesU, BoxesEC,
                Fully)}


# Extreme clicking noise

@dataclass(frozen=True)
class NoiseModel:
    """Gaussian corner noise used to simulate extreme-clicking boxes.

    Every corner coordinate moves by N(0, sigma_scale * r * side) where side
    is the box width or height and r is a per-box log-normal factor with
    mean 1 and log-spread ``dispersion`` (r == 1 when dispersion is 0).
    """

    sigma_scale: float
    seed: int = 0
    dispersion: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.sigma_scale) and self.sigma_scale >= 0):
            raise LabelError(
                f"sigma_scale must be finite and non-negative, got "
                f"{self.sigma_scale}")
        if not (math.isfinite(self.dispersion) and self.dispersion >= 0):
            raise LabelError(
                f"dispersion must be finite and non-negative, got "
                f"{self.dispersion}")


# Target IoU moments of simulated extreme clicking boxes.
EC_TARGET_MEAN = 0.82
EC_TARGET_STD = 0.16
# calibrate_ec(EC_TARGET_MEAN, EC_TARGET_STD) on coco_like_boxes(10000).
DEFAULT_EC_NOISE = NoiseModel(sigma_scale=0.0751, seed=0, dispersion=0.937)


def _draw_noise(n, seed):
    rng = np.random.default_rng(seed)
    corner = rng.standard_normal((n, 4))
    spread = rng.standard_normal(n)
    return corner, spread


def _repair_extent(lo, hi):
    """Sort, clamp into [0, 1] and enforce a minimum side on 1-D extents."""
    lo, hi = np.minimum(lo, hi), np.maximum(lo, hi)
    lo, hi = np.clip(lo, 0.0, 1.0), np.clip(hi, 0.0, 1.0)
    thin = (hi - lo) < 2 * MIN_SIDE
    if thin.any():
        center = np.clip((lo + hi) / 2, 2 * MIN_SIDE, 1 - 2 * MIN_SIDE)
        lo = np.where(thin, center - 2 * MIN_SIDE, lo)
        hi = np.where(thin, center + 2 * MIN_SIDE, hi)
    return lo, hi


def _perturb(boxes, corner, spread, sigma_scale, dispersion):
    if sigma_scale == 0:
        return boxes.copy()
    xy = cxcywh_to_xyxy(boxes)
    sides = np.stack([boxes[:, 2], boxes[:, 3], boxes[:, 2], boxes[:, 3]],
                     axis=1)
    factor = np.exp(dispersion * spread - dispersion ** 2 / 2)
    moved = xy + sigma_scale * factor[:, None] * corner * sides
    x0, x1 = _repair_extent(moved[:, 0], moved[:, 2])
    y0, y1 = _repair_extent(moved[:, 1], moved[:, 3])
    return xyxy_to_cxcywh(np.stack([x0, y0, x1, y1], axis=1))


def simulate_ec_boxes(boxes, noise: NoiseModel):
    """Simulate extreme-clicking boxes for an (N, 4) array of boxes."""
    boxes = validate_box_array(boxes)
    corner, spread = _draw_noise(boxes.shape[0], noise.seed)
    return _perturb(boxes, corner, spread, noise.sigma_scale,
                    noise.dispersion)


def simulate_ec(gt: BoundingBox, noise: NoiseModel) -> BoundingBox:
    """Perturb one ground-truth box the way an extreme click would."""
    if noise.sigma_scale == 0:
        return gt
    return BoundingBox.from_array(simulate_ec_boxes(gt.to_array()[None, :],
                                                    noise)[0])


def _paired_iou(a, b):
    a_xy, b_xy = cxcywh_to_xyxy(a), cxcywh_to_xyxy(b)
    wh = np.clip(np.minimum(a_xy[:, 2:], b_xy[:, 2:])
                 - np.maximum(a_xy[:, :2], b_xy[:, :2]), 0.0, None)
    inter = wh[:, 0] * wh[:, 1]
    union = a[:, 2] * a[:, 3] + b[:, 2] * b[:, 3] - inter
    return inter / union


def ec_iou_samples(boxes, noise: NoiseModel):
    """IoU between every box and its simulated extreme-clicking version."""
    boxes = validate_box_array(boxes)
    return _paired_iou(boxes, simulate_ec_boxes(boxes, noise))


def ec_iou_stats(boxes, noise: NoiseModel):
    """Mean, standard deviation and variance of the simulated IoU."""
    ious = ec_iou_samples(boxes, noise)
    return {"mean": float(ious.mean()), "std": float(ious.std()),
            "variance": float(ious.var()), "count": int(ious.size)}


def _bisect(func, lo, hi, iterations):
    """Bisection for a decreasing ``func`` crossing zero inside [lo, hi]."""
    for _ in range(iterations):
        mid = (lo + hi) / 2
        if func(mid) > 0:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2


def calibrate_ec(target_mean, target_std=None, box_sample=None, seed=0,
                 max_sigma=8.0, max_dispersion=3.0):
    """Fit a NoiseModel whose simulated IoU matches the target moments.

    sigma_scale is found by bisection on the mean IoU, which decreases as the
    noise grows. When ``target_std`` is given the dispersion is fitted too,
    by an outer bisection on the IoU standard deviation at the matched mean.

    Args:
        target_mean: Mean IoU to reach, in (0, 1)
        target_std: Optional IoU standard deviation to reach
        box_sample: (N, 4) array or list of BoundingBox to calibrate on
        seed: Seed of the noise draws; also the seed of the returned model
        max_sigma: Largest sigma_scale searched
        max_dispersion: Largest dispersion searched

    Returns:
        NoiseModel
    """
    if not 0 < target_mean < 1:
        raise CalibrationError(
            f"Target mean IoU must lie in (0, 1), got {target_mean}")
    if box_sample is None or len(box_sample) == 0:
        raise CalibrationError("Calibration needs a non-empty box sample")
    if len(box_sample) and isinstance(box_sample[0], BoundingBox):
        box_sample = boxes_to_array(box_sample)
    boxes = validate_box_array(box_sample)
    corner, spread = _draw_noise(boxes.shape[0], seed)

    def moments(sigma, dispersion):
        ious = _paired_iou(boxes, _perturb(boxes, corner, spread, sigma,
                                           dispersion))
        return ious.mean(), ious.std()

    def fit_sigma(dispersion):
        if moments(max_sigma, dispersion)[0] > target_mean:
            raise CalibrationError(
                f"Mean IoU {target_mean} is not reachable with sigma_scale "
                f"<= {max_sigma}")
        return _bisect(lambda s: moments(s, dispersion)[0] - target_mean,
                       0.0, max_sigma, 50)

    if target_std is None:
        sigma = fit_sigma(0.0)
        logger.debug(f"Calibrated sigma_scale={sigma}")
        return NoiseModel(sigma_scale=sigma, seed=seed)

    def std_gap(dispersion):
        return target_std - moments(fit_sigma(dispersion), dispersion)[1]

    if std_gap(0.0) <= 0:
        logger.warning(f"IoU std already exceeds {target_std} without "
                       f"dispersion; fitting the mean only")
        return NoiseModel(sigma_scale=fit_sigma(0.0), seed=seed)
    if std_gap(max_dispersion) > 0:
        raise CalibrationError(
            f"IoU std {target_std} is not reachable at mean {target_mean}")
    dispersion = _bisect(std_gap, 0.0, max_dispersion, 30)
    sigma = fit_sigma(dispersion)
    logger.debug(f"Calibrated sigma_scale={sigma}, dispersion={dispersion}")
    return NoiseModel(sigma_scale=sigma, seed=seed, dispersion=dispersion)


def coco_like_boxes(n, seed=0):
    """Sample n boxes whose sizes spread over two orders of magnitude."""
    rng = np.random.default_rng(seed)
    w = np.exp(rng.uniform(math.log(0.02), math.log(0.9), n))
    h = np.clip(w * np.exp(rng.normal(0.0, 0.4, n)), 0.01, 0.95)
    cx = rng.uniform(w / 2, 1 - w / 2)
    cy = rng.uniform(h / 2, 1 - h / 2)
    return np.stack([cx, cy, w, h], axis=1)


# Downgrading

def sample_interior_points(boxes, rng):
    """One uniform point inside each (N, 4) box, edges included."""
    xy = cxcywh_to_xyxy(boxes)
    u = rng.random((boxes.shape[0], 2))
    px = np.clip(xy[:, 0] + u[:, 0] * boxes[:, 2], xy[:, 0], xy[:, 2])
    py = np.clip(xy[:, 1] + u[:, 1] * boxes[:, 3], xy[:, 1], xy[:, 3])
    return np.clip(np.stack([px, py], axis=1), 0.0, 1.0)


def downgrade(full: Fully, target, seed=0, noise: NoiseModel = None):
    """Turn a full annotation into a weaker omni-label.

    Args:
        full: The Fully label of one image
        target: LabelFormat (or its wire name) to produce
        seed: Seed of the point sampler and the extreme-click noise
        noise: Noise used for BoxesEC; DEFAULT_EC_NOISE when omitted

    Returns:
        OmniLabel of the requested format
    """
    if not isinstance(full, Fully):
        raise LabelError(f"Only Fully labels can be downgraded, got "
                         f"{type(full).__name__}")
    target = LabelFormat.parse(target)
    rng = np.random.default_rng(seed)

    if target is LabelFormat.NONE:
        return NoneLabel()
    if target is LabelFormat.FULLY:
        return full
    if target is LabelFormat.TAGS_U:
        return TagsU(tuple(sorted(set(full.classes))))
    if target is LabelFormat.TAGS_K:
        counts = Counter(full.classes)
        return TagsK(tuple(sorted(counts.items())))
    if target is LabelFormat.BOXES_U:
        return BoxesU(full.boxes)

    boxes = boxes_to_array(full.boxes)
    if target is LabelFormat.BOXES_EC:
        noise = replace(noise or DEFAULT_EC_NOISE, seed=seed)
        if boxes.shape[0] == 0:
            return BoxesEC(())
        simulated = simulate_ec_boxes(boxes, noise)
        return BoxesEC(tuple(BoundingBox.from_array(b) for b in simulated))

    points = [Point2D(float(x), float(y))
              for x, y in sample_interior_points(boxes, rng)]
    if target is LabelFormat.POINTS_U:
        return PointsU(tuple(points))
    return PointsK(tuple(zip(points, full.classes)))


def assign_formats(image_ids, fractions, seed=0):
    """Split images between label formats according to mixture fractions.

    Images are shuffled with the seed and handed out in LabelFormat order;
    counts are rounded with the largest-remainder rule so they add up to the
    number of images.

    Args:
        image_ids: The images to split
        fractions: Mapping of LabelFormat to the share of images
        seed: Shuffle seed

    Returns:
        dict of image_id to LabelFormat
    """
    image_ids = list(image_ids)
    n = len(image_ids)
    shares = sorted(((LabelFormat.parse(f), float(v))
                     for f, v in fractions.items() if v > 0),
                    key=lambda item: list(LabelFormat).index(item[0]))
    exact = [v * n for _, v in shares]
    counts = [math.floor(x) for x in exact]
    remainder = n - sum(counts)
    by_fraction = sorted(range(len(shares)),
                         key=lambda i: (-(exact[i] - counts[i]), i))
    for i in by_fraction[:max(remainder, 0)]:
        counts[i] += 1

    order = np.random.default_rng(seed).permutation(n)
    assignment = {}
    start = 0
    for (fmt, _), count in zip(shares, counts):
        for position in order[start:start + count]:
            assignment[image_ids[position]] = fmt
        start += count
    return assignment

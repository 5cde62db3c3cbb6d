"""Pseudo-label filtering of teacher predictions against omni-labels.

The unified filter builds a format-specific cost matrix between the G
ground-truth entities of an omni-label and the K teacher predictions, solves
the assignment, and reads the pseudo labels off the matched pairs. The
simple filters are the per-format heuristics (thresholding, top-n,
containment) kept for comparison.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Hashable, Optional

import numpy as np

from src.annotation import (BoxesU, Fully, LabelFormat, NoneLabel, OmniLabel,
                            PointsK, PointsU, TagsK, TagsU)
from src.exceptions import ConfigError, DimensionError, FilterError
from src.geometry import (BoundingBox, boxes_to_array, pairwise_center_distance,
                          pairwise_contains, pairwise_giou, pairwise_l1,
                          points_to_array)
from src.matching import BIG, MATCHERS, CostMatrix
from src.prediction import ScoredPrediction, TeacherPrediction, score

logger = logging.getLogger(__name__)

STRATEGIES = ("unified", "simple")


@dataclass(frozen=True)
class FilterConfig:
    """Thresholds and weights of the pseudo-label filter."""

    tau: float = 0.7
    gamma: float = 0.5
    lambda_iou: float = 2.0
    lambda_l1: float = 5.0
    strategy: str = "unified"
    drop_infeasible: bool = False

    def __post_init__(self):
        if not 0 < self.tau < 1:
            raise ConfigError(f"tau must lie in (0, 1), got {self.tau}")
        if not 0 <= self.gamma <= 1:
            raise ConfigError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.lambda_iou < 0 or self.lambda_l1 < 0:
            raise ConfigError("Box cost weights must be non-negative")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"Unknown strategy '{self.strategy}'")


@dataclass(frozen=True)
class PseudoLabel:
    """One selected prediction.

    ``target_index`` is the ground-truth row the item was selected for (None
    when no ground truth exists). ``cost`` is the matched cost under the
    unified filter and None for the simple filters.
    """

    box: BoundingBox
    class_id: int
    score: float
    source_query: int
    target_index: Optional[int] = None
    cost: Optional[float] = None
    infeasible: bool = False


@dataclass(frozen=True)
class PseudoLabelSet:
    items: tuple = ()
    image_id: Hashable = None
    label_format: LabelFormat = LabelFormat.NONE
    total_cost: Optional[float] = None
    meta: dict = field(default_factory=dict, compare=False)

    def __len__(self):
        return len(self.items)

    @property
    def classes(self):
        return [item.class_id for item in self.items]

    @property
    def source_queries(self):
        return [item.source_query for item in self.items]


def _check_tags(sp, tags):
    tags = np.asarray(tags, dtype=int).reshape(-1)
    if ((tags < 0) | (tags >= sp.num_classes)).any():
        raise FilterError(
            f"Tag classes {tags.tolist()} outside [0, {sp.num_classes})")
    return tags


def _check_rows(rows, sp):
    if rows > sp.num_queries:
        raise DimensionError(
            f"{rows} ground truths cannot be matched to {sp.num_queries} "
            f"predictions")


# Cost builders

def filter_none(sp: ScoredPrediction, boxes, cfg: FilterConfig):
    """Keep the predictions whose confidence is strictly above tau."""
    keep = np.flatnonzero(sp.score > cfg.tau)
    boxes = np.asarray(boxes, dtype=float)
    items = tuple(PseudoLabel(box=BoundingBox.from_array(boxes[k]),
                              class_id=int(sp.pred_class[k]),
                              score=float(sp.score[k]),
                              source_query=int(k))
                  for k in keep)
    return PseudoLabelSet(items=items, label_format=LabelFormat.NONE)


def predict_counts(sp: ScoredPrediction, tags, tau):
    """Predicted object count of every tag: max(1, #{k : p_k^c > tau})."""
    tags = _check_tags(sp, tags)
    if tags.size == 0:
        raise FilterError("Count prediction needs at least one tag")
    if len(set(tags.tolist())) != tags.size:
        raise FilterError(f"Tags must be unique: {tags.tolist()}")
    above = (sp.probs[:, tags] > tau).sum(axis=0)
    return [max(1, int(n)) for n in above]


def expand_tags(tags, counts, max_rows=None):
    """Repeat every tag by its count; cap the total at ``max_rows``.

    When the counts add up to more than max_rows the largest counts are
    lowered first (never below one).
    """
    counts = [int(n) for n in counts]
    if max_rows is not None and sum(counts) > max_rows:
        if len(counts) > max_rows:
            raise FilterError(f"{len(counts)} tags cannot be matched to "
                              f"{max_rows} predictions")
        logger.warning(f"Predicted counts {counts} exceed {max_rows} "
                       f"predictions; truncating")
        while sum(counts) > max_rows:
            largest = max(counts)
            # lower the last of the largest counts first
            i = len(counts) - 1 - counts[::-1].index(largest)
            counts[i] -= 1
    return np.repeat(np.asarray(tags, dtype=int), counts)


def tag_cost(sp: ScoredPrediction, expanded_tags) -> CostMatrix:
    """1 - p_k^{c_i} for every expanded tag i and prediction k."""
    tags = _check_tags(sp, expanded_tags)
    _check_rows(tags.size, sp)
    return CostMatrix(1.0 - sp.probs[:, tags].T)


def _as_points(points):
    if isinstance(points, np.ndarray):
        return points.reshape(-1, 2).astype(float)
    return points_to_array(points)


def _as_boxes(boxes):
    if isinstance(boxes, np.ndarray):
        return boxes.reshape(-1, 4).astype(float)
    return boxes_to_array(boxes)


def _point_cost_values(sp, boxes, points):
    points = _as_points(points)
    if points.shape[0] == 0:
        raise FilterError("Point cost needs at least one point")
    _check_rows(points.shape[0], sp)
    boxes = _as_boxes(boxes)
    distance = pairwise_center_distance(points, boxes)
    low, high = distance.min(), distance.max()
    if high > low:
        normalized = (distance - low) / (high - low)
    else:
        normalized = np.zeros_like(distance)
    values = normalized + (1.0 - sp.score)[None, :]
    feasible = pairwise_contains(points, boxes)
    return np.where(feasible, values, BIG), feasible


def point_cost(sp: ScoredPrediction, boxes, points) -> CostMatrix:
    """Normalized center distance plus (1 - score), BIG outside the box.

    Distances are min-max normalized over the whole G x K matrix before
    masking; when they are all equal the normalized distance is 0.
    """
    values, _ = _point_cost_values(sp, boxes, points)
    return CostMatrix(values)


def point_tag_cost(sp: ScoredPrediction, boxes, pairs, gamma) -> CostMatrix:
    """gamma * tag cost + (1 - gamma) * point cost; BIG entries stay BIG."""
    points = points_to_array([p for p, _ in pairs])
    classes = [c for _, c in pairs]
    point_values, feasible = _point_cost_values(sp, boxes, points)
    tags = tag_cost(sp, classes).values
    combined = gamma * tags + (1.0 - gamma) * point_values
    return CostMatrix(np.where(feasible, combined, BIG))


def box_cost(sp: ScoredPrediction, pred_boxes, gt_boxes, lambda_iou,
             lambda_l1) -> CostMatrix:
    """lambda_iou * (1 - GIoU) + lambda_l1 * L1 between gt and predictions."""
    gt = _as_boxes(gt_boxes)
    _check_rows(gt.shape[0], sp)
    pred_boxes = _as_boxes(pred_boxes)
    values = (lambda_iou * (1.0 - pairwise_giou(gt, pred_boxes))
              + lambda_l1 * pairwise_l1(gt, pred_boxes))
    return CostMatrix(values)


# Unified filter

def _expanded_tags(sp, label, cfg):
    if isinstance(label, TagsU):
        counts = predict_counts(sp, label.classes, cfg.tau)
        return expand_tags(label.classes, counts, max_rows=sp.num_queries)
    return expand_tags(label.classes, label.counts)


def build_cost_matrix(pred: TeacherPrediction, label: OmniLabel,
                      cfg: FilterConfig, sp: ScoredPrediction = None):
    """Cost matrix the unified filter matches for ``label``.

    Returns:
        (CostMatrix, rows) where rows describes the ground truth of every row
        (class ids for tags, indices into the label otherwise)
    """
    sp = sp if sp is not None else score(pred)
    if isinstance(label, (NoneLabel, Fully)):
        raise FilterError(f"{label.format.value} labels have no cost matrix")
    if label.size == 0:
        raise FilterError(
            f"Empty {label.format.value} label for image {pred.image_id}")
    label.validate(sp.num_classes)
    if label.size > sp.num_queries and not isinstance(label, TagsU):
        raise FilterError(
            f"Image {pred.image_id} has {label.size} ground truths but only "
            f"{sp.num_queries} predictions")

    if isinstance(label, (TagsU, TagsK)):
        rows = _expanded_tags(sp, label, cfg)
        return tag_cost(sp, rows), rows
    if isinstance(label, PointsU):
        return (CostMatrix(_point_cost_values(
            sp, pred.boxes, points_to_array(label.points))[0]),
            np.arange(label.size))
    if isinstance(label, PointsK):
        return (point_tag_cost(sp, pred.boxes, label.pairs, cfg.gamma),
                np.arange(label.size))
    if isinstance(label, BoxesU):
        return (box_cost(sp, pred.boxes, label.boxes, cfg.lambda_iou,
                         cfg.lambda_l1), np.arange(label.size))
    raise FilterError(f"Unsupported label format {label.format.value}")


def unified_filter(pred: TeacherPrediction, label: OmniLabel,
                   cfg: FilterConfig = None, matcher="hungarian"):
    """Select pseudo labels by bipartite matching against the omni-label.

    Args:
        pred: Teacher prediction for the image
        label: The image's omni-label
        cfg: FilterConfig; defaults when omitted
        matcher: "hungarian" or "brute_force"

    Returns:
        PseudoLabelSet with one item per ground-truth row (None labels keep
        every prediction above tau)
    """
    cfg = cfg or FilterConfig()
    sp = score(pred)
    if isinstance(label, NoneLabel):
        result = filter_none(sp, pred.boxes, cfg)
        return PseudoLabelSet(items=result.items, image_id=pred.image_id,
                              label_format=LabelFormat.NONE)

    cost_matrix, rows = build_cost_matrix(pred, label, cfg, sp)
    assignment = MATCHERS[matcher](cost_matrix)
    infeasible = set(assignment.infeasible_rows)

    items = []
    for i, k in enumerate(assignment.match):
        cost = float(cost_matrix.values[i, k])
        if isinstance(label, (TagsU, TagsK)):
            class_id = int(rows[i])
            item = PseudoLabel(box=pred.box(k), class_id=class_id,
                               score=float(sp.probs[k, class_id]),
                               source_query=k, target_index=i, cost=cost)
        elif isinstance(label, PointsK):
            class_id = label.classes[i]
            item = PseudoLabel(box=pred.box(k), class_id=class_id,
                               score=float(sp.probs[k, class_id]),
                               source_query=k, target_index=i, cost=cost,
                               infeasible=i in infeasible)
        elif isinstance(label, PointsU):
            item = PseudoLabel(box=pred.box(k),
                               class_id=int(sp.pred_class[k]),
                               score=float(sp.score[k]), source_query=k,
                               target_index=i, cost=cost,
                               infeasible=i in infeasible)
        else:
            # boxes keep the ground-truth box and take the predicted class
            item = PseudoLabel(box=label.boxes[i],
                               class_id=int(sp.pred_class[k]),
                               score=float(sp.score[k]), source_query=k,
                               target_index=i, cost=cost)
        items.append(item)

    if infeasible:
        logger.debug(f"Image {pred.image_id}: rows {sorted(infeasible)} "
                     f"have no feasible prediction")
    if cfg.drop_infeasible:
        items = [item for item in items if not item.infeasible]
    return PseudoLabelSet(items=tuple(items), image_id=pred.image_id,
                          label_format=label.format,
                          total_cost=assignment.total_cost)


# Simple filters

def _best_untaken(order, taken):
    for k in order:
        if k not in taken:
            return int(k)
    return None


def simple_filter(pred: TeacherPrediction, label: OmniLabel,
                  cfg: FilterConfig = None):
    """Heuristic per-format selection.

    TagsU keeps the queries above tau for each tag, or the top-1 query when
    none passes. TagsK keeps the top n queries per tag. PointsU keeps, for
    each point, the highest-scoring prediction containing it; PointsK also
    requires the predicted class to equal the point's tag. A query is used
    at most once per image.
    """
    cfg = cfg or FilterConfig()
    sp = score(pred)
    if isinstance(label, NoneLabel):
        result = filter_none(sp, pred.boxes, cfg)
        return PseudoLabelSet(items=result.items, image_id=pred.image_id,
                              label_format=LabelFormat.NONE)
    if isinstance(label, (BoxesU, Fully)):
        raise FilterError(
            f"No simple filter exists for {label.format.value} labels")
    if label.size == 0:
        raise FilterError(
            f"Empty {label.format.value} label for image {pred.image_id}")
    label.validate(sp.num_classes)

    taken = set()
    items = []
    if isinstance(label, (TagsU, TagsK)):
        row = 0
        counts = (label.counts if isinstance(label, TagsK)
                  else [None] * len(label.classes))
        for class_id, count in zip(label.classes, counts):
            probs = sp.probs[:, class_id]
            order = np.argsort(-probs, kind="stable")
            if count is None:
                chosen = [int(k) for k in order
                          if probs[k] > cfg.tau and k not in taken]
                if not chosen:
                    best = _best_untaken(order, taken)
                    chosen = [] if best is None else [best]
            else:
                chosen = [int(k) for k in order if k not in taken][:count]
            for k in chosen:
                taken.add(k)
                items.append(PseudoLabel(box=pred.box(k), class_id=class_id,
                                         score=float(probs[k]),
                                         source_query=k, target_index=row))
                row += 1
            if count is not None and len(chosen) < count:
                row += count - len(chosen)
    else:
        points = points_to_array(label.points)
        inside = pairwise_contains(points, pred.boxes)
        order = np.argsort(-sp.score, kind="stable")
        for i in range(label.size):
            candidates = inside[i]
            if isinstance(label, PointsK):
                candidates = candidates & (sp.pred_class == label.classes[i])
            k = _best_untaken((k for k in order if candidates[k]), taken)
            if k is None:
                continue
            taken.add(k)
            class_id = (label.classes[i] if isinstance(label, PointsK)
                        else int(sp.pred_class[k]))
            items.append(PseudoLabel(box=pred.box(k), class_id=class_id,
                                     score=float(sp.score[k]),
                                     source_query=k, target_index=i))
    return PseudoLabelSet(items=tuple(items), image_id=pred.image_id,
                          label_format=label.format)


def selection_cost(cost_matrix: CostMatrix, pseudo: PseudoLabelSet):
    """Sum of the matrix entries picked by a selection.

    Returns None when the selection does not cover every row exactly once.
    """
    rows = [item.target_index for item in pseudo.items]
    if sorted(rows) != list(range(cost_matrix.num_rows)):
        return None
    return float(sum(cost_matrix.values[item.target_index, item.source_query]
                     for item in pseudo.items))


def passthrough(label: Fully, image_id=None):
    """Fully labeled images keep their annotation as pseudo labels.

    Items carry score 1 and source_query -1 since no prediction is used.
    """
    items = tuple(PseudoLabel(box=box, class_id=class_id, score=1.0,
                              source_query=-1, target_index=i)
                  for i, (box, class_id) in enumerate(label.pairs))
    return PseudoLabelSet(items=items, image_id=image_id,
                          label_format=LabelFormat.FULLY)


def filter_image(pred: TeacherPrediction, label: OmniLabel,
                 cfg: FilterConfig = None, matcher="hungarian"):
    """Run the filter the config's strategy names.

    Fully labels bypass both filters.
    """
    cfg = cfg or FilterConfig()
    if isinstance(label, Fully):
        label.validate(pred.num_classes)
        return passthrough(label, pred.image_id)
    if cfg.strategy == "simple":
        return simple_filter(pred, label, cfg)
    return unified_filter(pred, label, cfg, matcher=matcher)

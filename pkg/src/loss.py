"""Match-then-score loss of one image.

Labels are matched to the predictions with a Hungarian matcher whose cost
mixes a focal classification term with the box cost, then the matched pairs
are scored with a sigmoid focal loss and a GIoU plus L1 box loss. The
numbers are a reference any trainer can be regression-tested against.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit

from src.annotation import Fully
from src.exceptions import ConfigError, DimensionError, LabelError
from src.geometry import boxes_to_array, pairwise_giou, pairwise_l1
from src.matching import CostMatrix, hungarian
from src.prediction import TeacherPrediction

logger = logging.getLogger(__name__)

# Keeps log() finite in the matching cost.
_LOG_EPS = 1e-8


@dataclass(frozen=True)
class LossConfig:
    """Loss weights and the matcher weights used before scoring.

    Attributes:
        alpha: weight of the classification loss in the total
        beta: weight of the box loss in the total
        focal_alpha: focal loss balance
        focal_gamma: focal loss focusing parameter
        cost_class: matcher weight of the classification cost
        cost_bbox: matcher weight of the L1 box cost
        cost_giou: matcher weight of the GIoU cost
        giou_weight: weight of 1 - giou inside the box loss
        l1_weight: weight of the L1 distance inside the box loss
    """

    alpha: float = 2.0
    beta: float = 5.0
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    cost_class: float = 2.0
    cost_bbox: float = 5.0
    cost_giou: float = 2.0
    giou_weight: float = 2.0
    l1_weight: float = 5.0

    def __post_init__(self):
        for name in ("alpha", "beta", "focal_gamma", "cost_class",
                     "cost_bbox", "cost_giou", "giou_weight", "l1_weight"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if not 0 <= self.focal_alpha <= 1:
            raise ConfigError(
                f"focal_alpha must lie in [0, 1], got {self.focal_alpha}")


@dataclass(frozen=True)
class LossBreakdown:
    cls: float
    box: float
    total: float
    alpha: float = 2.0
    beta: float = 5.0
    num_labels: int = 0
    matched: tuple = ()

    def recompute_total(self):
        return self.alpha * self.cls + self.beta * self.box


def _split_labels(labels):
    if isinstance(labels, Fully):
        labels = labels.pairs
    labels = list(labels)
    boxes = boxes_to_array([b for b, _ in labels])
    classes = np.array([int(c) for _, c in labels], dtype=int)
    return boxes, classes


def sigmoid_focal_loss(logits, targets, alpha=0.25, gamma=2.0):
    """Elementwise sigmoid focal loss of logits against 0/1 targets."""
    prob = expit(logits)
    ce = -(targets * log_expit(logits) + (1 - targets) * log_expit(-logits))
    p_t = prob * targets + (1 - prob) * (1 - targets)
    loss = ce * (1 - p_t) ** gamma
    if alpha >= 0:
        loss = (alpha * targets + (1 - alpha) * (1 - targets)) * loss
    return loss


def matching_cost(pred: TeacherPrediction, boxes, classes,
                  cfg: LossConfig) -> CostMatrix:
    """G x K matcher cost: focal class cost plus weighted L1 and GIoU."""
    prob = expit(pred.logits[:, classes]).T
    a, g = cfg.focal_alpha, cfg.focal_gamma
    neg = (1 - a) * prob ** g * -np.log(1 - prob + _LOG_EPS)
    pos = a * (1 - prob) ** g * -np.log(prob + _LOG_EPS)
    values = (cfg.cost_class * (pos - neg)
              + cfg.cost_bbox * pairwise_l1(boxes, pred.boxes)
              + cfg.cost_giou * (1.0 - pairwise_giou(boxes, pred.boxes)))
    return CostMatrix(values)


def eval_loss(pred: TeacherPrediction, labels, cfg: LossConfig = None):
    """Loss of one image's predictions against its labels.

    Args:
        pred: Teacher or student prediction for the image
        labels: (BoundingBox, class id) pairs, or a Fully label
        cfg: LossConfig, defaults when None

    Returns:
        LossBreakdown
    """
    cfg = cfg or LossConfig()
    boxes, classes = _split_labels(labels)
    n = len(classes)
    if n > pred.num_queries:
        raise DimensionError(
            f"{n} labels cannot be matched to {pred.num_queries} predictions")
    if ((classes < 0) | (classes >= pred.num_classes)).any():
        raise LabelError(
            f"Label classes {classes.tolist()} outside "
            f"[0, {pred.num_classes})")

    targets = np.zeros_like(pred.logits)
    matched = ()
    box = 0.0
    if n:
        assignment = hungarian(matching_cost(pred, boxes, classes, cfg))
        matched = assignment.match
        queries = np.array(matched, dtype=int)
        targets[queries, classes] = 1.0
        giou = np.diag(pairwise_giou(boxes, pred.boxes[queries]))
        l1 = np.diag(pairwise_l1(boxes, pred.boxes[queries]))
        box = float(np.sum(cfg.giou_weight * (1.0 - giou)
                           + cfg.l1_weight * l1)) / n

    focal = sigmoid_focal_loss(pred.logits, targets, cfg.focal_alpha,
                               cfg.focal_gamma)
    cls = float(focal.sum()) / max(1, n)
    total = cfg.alpha * cls + cfg.beta * box
    logger.debug(f"Loss of image {pred.image_id}: cls={cls}, box={box}")
    return LossBreakdown(cls=cls, box=box, total=total, alpha=cfg.alpha,
                         beta=cfg.beta, num_labels=n, matched=matched)

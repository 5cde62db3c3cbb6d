"""Precision and recall of pseudo labels against full annotations.

Pseudo boxes are matched to ground-truth boxes greedily in order of
descending IoU, the way detection evaluation does it. This is unrelated to
the assignment solver the filter uses.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from src.annotation import Fully
from src.exceptions import ConfigError
from src.filtering import PseudoLabelSet
from src.geometry import boxes_to_array, pairwise_iou

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class QualityReport:
    """Counts of one image or a corpus, and the derived ratios."""

    tp: int = 0
    fp: int = 0
    fn: int = 0
    iou_sum: float = 0.0

    @property
    def counts(self):
        return self.tp, self.fp, self.fn

    @property
    def precision(self):
        if self.tp + self.fp == 0:
            return 1.0
        return self.tp / (self.tp + self.fp)

    @property
    def recall(self):
        if self.tp + self.fn == 0:
            return 1.0
        return self.tp / (self.tp + self.fn)

    @property
    def mean_iou_matched(self):
        return self.iou_sum / self.tp if self.tp else 0.0

    def to_dict(self):
        return {"precision": self.precision, "recall": self.recall,
                "mean_iou_matched": self.mean_iou_matched, "tp": self.tp,
                "fp": self.fp, "fn": self.fn}


def greedy_match(ious, thresh):
    """Greedy one-to-one matching on an IoU matrix.

    Pairs are visited by descending IoU (ties by row, then column) and kept
    while both sides are free and the IoU reaches ``thresh``.

    Returns:
        list of (row, column, iou)
    """
    if ious.size == 0:
        return []
    rows, cols = np.nonzero(ious >= thresh)
    values = ious[rows, cols]
    order = np.lexsort((cols, rows, -values))
    used_rows, used_cols, matches = set(), set(), []
    for i in order:
        r, c = int(rows[i]), int(cols[i])
        if r in used_rows or c in used_cols:
            continue
        used_rows.add(r)
        used_cols.add(c)
        matches.append((r, c, float(values[i])))
    return matches


def score_pseudo(pseudo: PseudoLabelSet, gt: Fully,
                 iou_thresh=0.5) -> QualityReport:
    """Score one image's pseudo labels against its full annotation.

    A pseudo label is a true positive when it is matched to a ground-truth
    box of the same class with IoU >= iou_thresh.
    """
    if not 0 < iou_thresh < 1:
        raise ConfigError(f"IoU threshold must lie in (0, 1), got {iou_thresh}")
    pred_boxes = boxes_to_array([item.box for item in pseudo.items])
    pred_classes = np.array(pseudo.classes, dtype=int)
    gt_boxes = boxes_to_array(gt.boxes)
    gt_classes = np.array(gt.classes, dtype=int)

    ious = pairwise_iou(pred_boxes, gt_boxes)
    if ious.size:
        ious = np.where(pred_classes[:, None] == gt_classes[None, :], ious,
                        -1.0)
    matches = greedy_match(ious, iou_thresh)
    tp = len(matches)
    return QualityReport(tp=tp, fp=len(pseudo) - tp, fn=gt.size - tp,
                         iou_sum=float(sum(m[2] for m in matches)))


def merge_reports(reports) -> QualityReport:
    """Sum the counts of several reports."""
    tp = fp = fn = 0
    iou_sum = 0.0
    for report in reports:
        tp += report.tp
        fp += report.fp
        fn += report.fn
        iou_sum += report.iou_sum
    return QualityReport(tp=tp, fp=fp, fn=fn, iou_sum=iou_sum)

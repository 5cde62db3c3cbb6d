"""Teacher outputs and the scores derived from them."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable

import numpy as np
from scipy.special import softmax

from src.exceptions import GeometryError, PredictionError
from src.geometry import BoundingBox, clamp_box_array

# Object queries per image used by the detector.
DEFAULT_NUM_QUERIES = 300


@dataclass(frozen=True)
class TeacherPrediction:
    """K x C logits and K boxes predicted by the teacher for one image.

    Attributes:
        logits: (K, C) array, one row of class logits per query
        boxes: (K, 4) array of normalized center-size boxes, clamped into
            the image
        image_id: identifier of the image the prediction belongs to
    """

    logits: np.ndarray
    boxes: np.ndarray
    image_id: Hashable = None

    def __post_init__(self):
        logits = np.asarray(self.logits, dtype=float)
        if logits.ndim != 2 or logits.shape[0] == 0 or logits.shape[1] == 0:
            raise PredictionError(
                f"Logits must be a non-empty K x C matrix, got shape "
                f"{logits.shape} for image {self.image_id}")
        if not np.isfinite(logits).all():
            raise PredictionError(
                f"Logits of image {self.image_id} contain non-finite values")
        try:
            boxes = clamp_box_array(self.boxes)
        except GeometryError as e:
            raise PredictionError(
                f"Invalid boxes for image {self.image_id}: {e.description}")
        if boxes.shape[0] != logits.shape[0]:
            raise PredictionError(
                f"Image {self.image_id} has {logits.shape[0]} logit rows but "
                f"{boxes.shape[0]} boxes")
        object.__setattr__(self, "logits", logits)
        object.__setattr__(self, "boxes", boxes)

    @property
    def num_queries(self):
        return self.logits.shape[0]

    @property
    def num_classes(self):
        return self.logits.shape[1]

    def box(self, k) -> BoundingBox:
        return BoundingBox.from_array(self.boxes[k])


@dataclass(frozen=True)
class ScoredPrediction:
    """Class probabilities, predicted class and confidence of every query."""

    probs: np.ndarray
    pred_class: np.ndarray
    score: np.ndarray
    boxes: np.ndarray = field(default=None, repr=False)

    @property
    def num_queries(self):
        return self.probs.shape[0]

    @property
    def num_classes(self):
        return self.probs.shape[1]


def score(pred: TeacherPrediction) -> ScoredPrediction:
    """Turn logits into softmax probabilities, argmax classes and scores.

    Ties in the argmax go to the lowest class index.
    """
    if not np.isfinite(pred.logits).all():
        raise PredictionError(
            f"Logits of image {pred.image_id} contain non-finite values")
    # scipy subtracts the row max before exponentiating
    probs = softmax(pred.logits, axis=1)
    # argmax over logits keeps ties exact; the first maximum wins
    pred_class = np.argmax(pred.logits, axis=1)
    scores = probs[np.arange(probs.shape[0]), pred_class]
    return ScoredPrediction(probs=probs, pred_class=pred_class,
                            score=scores, boxes=pred.boxes)

from dataclasses import dataclass
from typing import Hashable, Optional

import numpy as np
from marshmallow import (EXCLUDE, Schema, ValidationError, fields, post_load,
                         validate, validates_schema)

from src import FILE_FORMAT_VERSION
from src.annotation import (LABEL_TYPES, BoxesEC, BoxesU, Fully, LabelFormat,
                            NoiseModel, NoneLabel, PointsK, PointsU, TagsK,
                            TagsU)
from src.budget import DatasetStats, MixturePolicy
from src.ema import ParamVector
from src.exceptions import OmniError
from src.filtering import FilterConfig, PseudoLabel
from src.geometry import BoundingBox, Point2D, clamp_box_array
from src.loss import LossConfig
from src.prediction import TeacherPrediction


# Records of the COCO-style files
@dataclass(frozen=True)
class ImageInfo:
    id: Hashable
    width: float
    height: float
    file_name: Optional[str] = None


@dataclass(frozen=True)
class Category:
    id: int
    name: str
    supercategory: Optional[str] = None


@dataclass(frozen=True)
class Annotation:
    """A COCO annotation with its pixel box as read from the file."""

    id: int
    image_id: Hashable
    category_id: int
    bbox: tuple
    area: Optional[float] = None
    iscrowd: int = 0


def _check_image_id(value):
    if isinstance(value, bool) or not isinstance(value, (int, str)):
        raise ValidationError("Image ids must be integers or strings.")


# Custom fields
class Matrix(fields.Field):
    """A list of equal-length number lists held as a float numpy array."""

    default_error_messages = {
        "invalid": "Not a valid matrix.",
        "columns": "Rows must have {columns} entries.",
        "finite": "Entries must be finite numbers.",
    }

    def __init__(self, columns=None, **kwargs):
        super().__init__(**kwargs)
        self.columns = columns

    def _deserialize(self, value, attr, data, **kwargs):
        if not isinstance(value, (list, tuple)):
            raise self.make_error("invalid")
        try:
            array = np.asarray(value, dtype=float)
        except (TypeError, ValueError):
            raise self.make_error("invalid")
        if array.size == 0 and self.columns is not None:
            array = array.reshape(0, self.columns)
        if array.ndim != 2:
            raise self.make_error("invalid")
        if self.columns is not None and array.shape[1] != self.columns:
            raise self.make_error("columns", columns=self.columns)
        if not np.isfinite(array).all():
            raise self.make_error("finite")
        return array

    def _serialize(self, value, attr, obj, **kwargs):
        if value is None:
            return None
        return [[float(v) for v in row] for row in np.asarray(value)]


class Version(fields.Integer):
    """File format version; files without one are read as the current one."""

    def __init__(self, **kwargs):
        super().__init__(load_default=FILE_FORMAT_VERSION,
                         validate=validate.Equal(FILE_FORMAT_VERSION),
                         **kwargs)


# COCO annotation files
class ImageSchema(Schema):
    """Marshmallow schema for the images of a COCO-style file."""

    class Meta:
        unknown = EXCLUDE

    id = fields.Raw(required=True, validate=_check_image_id)
    width = fields.Float(required=True, validate=validate.Range(min=0,
                                                                min_inclusive=False))
    height = fields.Float(required=True, validate=validate.Range(min=0,
                                                                 min_inclusive=False))
    file_name = fields.String(load_default=None, allow_none=True)

    @post_load
    def make_image(self, data, **kwargs):
        return ImageInfo(**data)


class CategorySchema(Schema):
    """Marshmallow schema for the categories of a COCO-style file."""

    class Meta:
        unknown = EXCLUDE

    id = fields.Integer(required=True, strict=True)
    name = fields.String(required=True)
    supercategory = fields.String(load_default=None, allow_none=True)

    @post_load
    def make_category(self, data, **kwargs):
        return Category(**data)


class AnnotationSchema(Schema):
    """Marshmallow schema for one COCO annotation.

    Box extents are not checked here; the corpus loader collects malformed
    boxes as per-record errors instead of failing the whole file.
    """

    class Meta:
        unknown = EXCLUDE

    id = fields.Integer(required=True)
    image_id = fields.Raw(required=True, validate=_check_image_id)
    category_id = fields.Integer(required=True, strict=True)
    bbox = fields.List(fields.Float(), required=True,
                       validate=validate.Length(equal=4))
    area = fields.Float(load_default=None, allow_none=True)
    iscrowd = fields.Integer(load_default=0)

    @post_load
    def make_annotation(self, data, **kwargs):
        data["bbox"] = tuple(data["bbox"])
        return Annotation(**data)


class CocoSchema(Schema):
    """Marshmallow schema for a COCO-style annotation file."""

    class Meta:
        unknown = EXCLUDE

    version = Version()
    images = fields.List(fields.Nested(ImageSchema), required=True)
    categories = fields.List(fields.Nested(CategorySchema), required=True)
    annotations = fields.List(fields.Nested(AnnotationSchema),
                              load_default=list)


# Teacher predictions
class PredictionSchema(Schema):
    """Marshmallow schema for one line of a prediction JSONL file.

    ``K`` and ``C`` are optional; when present they must agree with the
    shape of ``logits``.
    """

    class Meta:
        unknown = EXCLUDE

    version = Version()
    image_id = fields.Raw(required=True, validate=_check_image_id)
    num_queries = fields.Integer(data_key="K", load_default=None,
                                 validate=validate.Range(min=1))
    num_classes = fields.Integer(data_key="C", load_default=None,
                                 validate=validate.Range(min=1))
    logits = Matrix(required=True)
    boxes = Matrix(columns=4, required=True, data_key="boxes_cxcywh")

    @validates_schema
    def validate_shape(self, data, **kwargs):
        logits = data.get("logits")
        if logits is None:
            return
        if data.get("num_queries") not in (None, logits.shape[0]):
            raise ValidationError({"K": [f"logits have {logits.shape[0]} "
                                         f"rows."]})
        if data.get("num_classes") not in (None, logits.shape[1]):
            raise ValidationError({"C": [f"logits have {logits.shape[1]} "
                                         f"columns."]})

    @post_load
    def make_prediction(self, data, **kwargs):
        try:
            return TeacherPrediction(logits=data["logits"],
                                     boxes=data["boxes"],
                                     image_id=data["image_id"])
        except OmniError as e:
            raise ValidationError({"boxes_cxcywh": [e.description]})


# Omni-labels
class TagCountSchema(Schema):
    class_id = fields.Integer(required=True, strict=True, data_key="class")
    count = fields.Integer(required=True, strict=True,
                           validate=validate.Range(min=1))


class OmniLabelSchema(Schema):
    """Marshmallow schema for the omni-label of one image.

    Which payload keys are required depends on the format: ``classes`` for
    tags_u, ``tags`` for tags_k, ``points`` for the point formats, ``boxes``
    for the box formats and fully, and ``classes`` alongside points_k and
    fully.
    """

    image_id = fields.Raw(required=True, validate=_check_image_id)
    format = fields.String(required=True,
                           validate=validate.OneOf([f.value for f in
                                                    LabelFormat]))
    classes = fields.List(fields.Integer(strict=True), load_default=None)
    tags = fields.List(fields.Nested(TagCountSchema), load_default=None)
    points = Matrix(columns=2, load_default=None)
    boxes = Matrix(columns=4, load_default=None)

    _REQUIRED = {
        "tags_u": ("classes",),
        "tags_k": ("tags",),
        "points_u": ("points",),
        "points_k": ("points", "classes"),
        "boxes_u": ("boxes",),
        "boxes_ec": ("boxes",),
        "fully": ("boxes", "classes"),
    }

    @validates_schema
    def validate_payload(self, data, **kwargs):
        required = self._REQUIRED.get(data.get("format"), ())
        missing = [key for key in required if data.get(key) is None]
        if missing:
            raise ValidationError(
                {key: ["Missing data for required field."] for key in missing})
        for key in ("points", "boxes"):
            if key in required and "classes" in required and \
                    len(data[key]) != len(data["classes"]):
                raise ValidationError(
                    {"classes": [f"Expected one class per entry of {key}."]})

    @post_load
    def make_label(self, data, **kwargs):
        try:
            label = label_from_payload(data)
        except OmniError as e:
            raise ValidationError({"format": [e.description]})
        return data["image_id"], label


def label_from_payload(data):
    """Build the OmniLabel a loaded label payload describes."""
    fmt = LabelFormat.parse(data["format"])
    if fmt is LabelFormat.NONE:
        return NoneLabel()
    if fmt is LabelFormat.TAGS_U:
        return TagsU(tuple(data["classes"]))
    if fmt is LabelFormat.TAGS_K:
        return TagsK(tuple((t["class_id"], t["count"]) for t in data["tags"]))
    if fmt in (LabelFormat.POINTS_U, LabelFormat.POINTS_K):
        points = [Point2D(float(x), float(y)) for x, y in data["points"]]
        if fmt is LabelFormat.POINTS_U:
            return PointsU(tuple(points))
        return PointsK(tuple(zip(points, data["classes"])))
    boxes = tuple(BoundingBox.from_array(b)
                  for b in clamp_box_array(data["boxes"]))
    if fmt is LabelFormat.FULLY:
        return Fully(tuple(zip(boxes, data["classes"])))
    return LABEL_TYPES[fmt](boxes)


def label_to_payload(image_id, label):
    """Inverse of label_from_payload, with plain JSON types."""
    payload = {"image_id": image_id, "format": label.format.value}
    if isinstance(label, TagsU):
        payload["classes"] = list(label.classes)
    elif isinstance(label, TagsK):
        payload["tags"] = [{"class": c, "count": n} for c, n in label.pairs]
    elif isinstance(label, (PointsU, PointsK)):
        payload["points"] = [[p.px, p.py] for p in label.points]
        if isinstance(label, PointsK):
            payload["classes"] = list(label.classes)
    elif isinstance(label, (BoxesU, BoxesEC, Fully)):
        payload["boxes"] = [[b.cx, b.cy, b.w, b.h] for b in label.boxes]
        if isinstance(label, Fully):
            payload["classes"] = list(label.classes)
    return payload


class OmniLabelFileSchema(Schema):
    """Marshmallow schema for an omni-label file."""

    class Meta:
        unknown = EXCLUDE

    version = Version()
    images = fields.List(fields.Nested(ImageSchema), load_default=list)
    categories = fields.List(fields.Nested(CategorySchema), load_default=list)
    labels = fields.List(fields.Nested(OmniLabelSchema), required=True)


# Pseudo labels
class PseudoAnnotationSchema(Schema):
    """Marshmallow schema for one pseudo-label annotation."""

    class Meta:
        unknown = EXCLUDE

    image_id = fields.Raw(required=True, validate=_check_image_id)
    class_id = fields.Integer(required=True, strict=True)
    bbox_cxcywh = fields.List(fields.Float(), required=True,
                              validate=validate.Length(equal=4))
    score = fields.Float(required=True)
    source_query = fields.Integer(required=True, strict=True)
    target_index = fields.Integer(load_default=None, allow_none=True)
    cost = fields.Float(load_default=None, allow_none=True)
    infeasible = fields.Boolean(load_default=False)

    @post_load
    def make_pseudo_label(self, data, **kwargs):
        item = PseudoLabel(box=BoundingBox(*data["bbox_cxcywh"]),
                           class_id=data["class_id"], score=data["score"],
                           source_query=data["source_query"],
                           target_index=data["target_index"],
                           cost=data["cost"], infeasible=data["infeasible"])
        return data["image_id"], item


class PseudoImageSchema(Schema):
    image_id = fields.Raw(required=True, validate=_check_image_id)
    label_format = fields.String(
        required=True, validate=validate.OneOf([f.value for f in LabelFormat]))
    total_cost = fields.Float(load_default=None, allow_none=True)


class PseudoFileSchema(Schema):
    """Marshmallow schema for a pseudo-label file."""

    class Meta:
        unknown = EXCLUDE

    version = Version()
    pseudo_images = fields.List(fields.Nested(PseudoImageSchema),
                                required=True)
    annotations = fields.List(fields.Nested(PseudoAnnotationSchema),
                              required=True)


# Configuration objects and small files
class DatasetStatsSchema(Schema):
    """Marshmallow schema for dataset statistics (stats files and profiles)."""

    name = fields.String(required=True)
    num_classes = fields.Integer(required=True, data_key="C",
                                 validate=validate.Range(min=1))
    avg_classes = fields.Float(required=True, data_key="C_avg")
    avg_instances = fields.Float(required=True, data_key="I_avg")
    size = fields.Integer(load_default=None, allow_none=True,
                          validate=validate.Range(min=0))

    @post_load
    def make_stats(self, data, **kwargs):
        data["name"] = data["name"].lower()
        return DatasetStats(**data)


class MixturePolicySchema(Schema):
    """Marshmallow schema for a mixture policy."""

    fractions = fields.Dict(keys=fields.String(
        validate=validate.OneOf([f.value for f in LabelFormat])),
        values=fields.Float(validate=validate.Range(min=0, max=1)),
        required=True)
    dataset_size = fields.Integer(required=True, validate=validate.Range(min=0))

    @post_load
    def make_policy(self, data, **kwargs):
        return MixturePolicy(**data)


class FilterConfigSchema(Schema):
    """Marshmallow schema for the filter configuration."""

    tau = fields.Float(load_default=0.7)
    gamma = fields.Float(load_default=0.5)
    lambda_iou = fields.Float(load_default=2.0)
    lambda_l1 = fields.Float(load_default=5.0)
    strategy = fields.String(load_default="unified",
                             validate=validate.OneOf(["unified", "simple"]))
    drop_infeasible = fields.Boolean(load_default=False)

    @post_load
    def make_config(self, data, **kwargs):
        return FilterConfig(**data)


class NoiseModelSchema(Schema):
    """Marshmallow schema for the extreme-clicking noise model."""

    class Meta:
        unknown = EXCLUDE

    version = Version()
    sigma_scale = fields.Float(required=True, validate=validate.Range(min=0))
    seed = fields.Integer(load_default=0)
    dispersion = fields.Float(load_default=0.0,
                              validate=validate.Range(min=0))

    @post_load
    def make_noise(self, data, **kwargs):
        data.pop("version", None)
        return NoiseModel(**data)


class LossConfigSchema(Schema):
    """Marshmallow schema for the loss configuration."""

    alpha = fields.Float(load_default=2.0)
    beta = fields.Float(load_default=5.0)
    focal_alpha = fields.Float(load_default=0.25)
    focal_gamma = fields.Float(load_default=2.0)
    cost_class = fields.Float(load_default=2.0)
    cost_bbox = fields.Float(load_default=5.0)
    cost_giou = fields.Float(load_default=2.0)
    giou_weight = fields.Float(load_default=2.0)
    l1_weight = fields.Float(load_default=5.0)

    @post_load
    def make_config(self, data, **kwargs):
        return LossConfig(**data)


class SnapshotSchema(Schema):
    """Marshmallow schema for a JSON parameter snapshot."""

    class Meta:
        unknown = EXCLUDE

    version = Version()
    param_version = fields.Integer(required=True,
                                   validate=validate.Range(min=0))
    values = fields.List(fields.Float(), required=True)

    @post_load
    def make_vector(self, data, **kwargs):
        return ParamVector(values=np.asarray(data["values"], dtype=float),
                           version=data["param_version"])

"""Readers and writers for every file the package consumes or emits.

All writers produce UTF-8 JSON with sorted keys and a ``"version"`` field,
so identical inputs give identical bytes. Floats are written with Python's
shortest round-trip representation.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from marshmallow import ValidationError

from src import FILE_FORMAT_VERSION
from src.annotation import Fully, LabelFormat, OmniLabel
from src.ema import ParamVector
from src.exceptions import (CorpusError, GeometryError, InputError,
                            LabelError, PredictionError)
from src.filtering import PseudoLabelSet
from src.geometry import BoundingBox
from src.helpers import id_sort_key
from src.schemas import (Annotation, Category, CocoSchema, DatasetStatsSchema,
                         ImageInfo, NoiseModelSchema, OmniLabelFileSchema,
                         PredictionSchema, PseudoFileSchema, SnapshotSchema,
                         label_to_payload)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Corpus:
    """A fully annotated image collection.

    Attributes:
        images: ImageInfo records in file order
        categories: Category records sorted by id
        category_table: category id -> dense class index in [0, C)
        annotations: image id -> Fully label (every image has one)
        records: the accepted COCO annotations with their pixel boxes
        rejected: per-record errors of annotations that were skipped
    """

    images: tuple
    categories: tuple
    category_table: dict
    annotations: dict
    records: tuple = ()
    rejected: tuple = field(default=(), compare=False)

    @property
    def num_classes(self):
        return len(self.categories)

    @property
    def image_ids(self):
        return sorted((image.id for image in self.images), key=id_sort_key)

    def image(self, image_id):
        for image in self.images:
            if image.id == image_id:
                return image
        raise CorpusError(f"Unknown image id {image_id!r}")

    @classmethod
    def from_labels(cls, images, categories, labels):
        """Build a corpus from Fully labels holding dense class indices.

        Pixel boxes of the COCO records are derived from the image sizes.
        """
        images = tuple(images)
        categories = tuple(sorted(categories, key=lambda c: c.id))
        sizes = {image.id: (image.width, image.height) for image in images}
        records = []
        annotations = {}
        for image in images:
            label = labels.get(image.id, Fully(()))
            annotations[image.id] = label
            width, height = sizes[image.id]
            for box, class_id in label.pairs:
                bbox = box.to_pixel_xywh(width, height)
                records.append(Annotation(
                    id=len(records) + 1, image_id=image.id,
                    category_id=categories[class_id].id, bbox=tuple(bbox),
                    area=bbox[2] * bbox[3], iscrowd=0))
        table = {c.id: i for i, c in enumerate(categories)}
        return cls(images=images, categories=categories, category_table=table,
                   annotations=annotations, records=tuple(records))


@dataclass(frozen=True)
class OmniLabelFile:
    images: tuple
    categories: tuple
    labels: dict


def _number(value):
    value = float(value)
    return int(value) if value.is_integer() and abs(value) < 2 ** 53 \
        else value


def _read_json(path):
    path = Path(path)
    with open(path, "r", encoding="utf-8") as file:
        try:
            return json.load(file)
        except json.JSONDecodeError as e:
            raise InputError(f"{path} is not valid JSON: {e}")


def _write_json(payload, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as file:
        json.dump(payload, file, sort_keys=True, indent=2, ensure_ascii=False,
                  allow_nan=False)
        file.write("\n")
    logger.info(f"Wrote {path}")


def _image_dict(image: ImageInfo):
    payload = {"id": image.id, "width": _number(image.width),
               "height": _number(image.height)}
    if image.file_name is not None:
        payload["file_name"] = image.file_name
    return payload


def _category_dict(category: Category):
    payload = {"id": category.id, "name": category.name}
    if category.supercategory is not None:
        payload["supercategory"] = category.supercategory
    return payload


# COCO annotation files

def load_coco(path) -> Corpus:
    """Read a COCO-style annotation file.

    Pixel [x, y, w, h] boxes become normalized center-size boxes. Boxes with
    a non-positive extent are skipped and listed in ``Corpus.rejected``.

    Raises:
        CorpusError: duplicate image ids, or annotations referencing an
            unknown image or category
    """
    data = CocoSchema().load(_read_json(path))
    images = tuple(data["images"])
    sizes = {}
    for image in images:
        if image.id in sizes:
            raise CorpusError(f"Duplicate image id {image.id!r} in {path}")
        sizes[image.id] = (image.width, image.height)
    categories = tuple(sorted(data["categories"], key=lambda c: c.id))
    table = {c.id: i for i, c in enumerate(categories)}
    if len(table) != len(categories):
        raise CorpusError(f"Duplicate category ids in {path}")

    unknown = []
    for record in data["annotations"]:
        if record.image_id not in sizes:
            unknown.append(f"annotation {record.id}: unknown image_id "
                           f"{record.image_id!r}")
        elif record.category_id not in table:
            unknown.append(f"annotation {record.id}: unknown category_id "
                           f"{record.category_id}")
    if unknown:
        raise CorpusError(f"{len(unknown)} annotations in {path} reference "
                          f"unknown records; first: {unknown[0]}",
                          details=unknown)

    pairs = {image.id: [] for image in images}
    records, rejected = [], []
    for record in data["annotations"]:
        width, height = sizes[record.image_id]
        x, y, w, h = record.bbox
        try:
            if w <= 0 or h <= 0:
                raise GeometryError(f"non-positive extent {list(record.bbox)}")
            box = BoundingBox.from_pixel_xywh(x, y, w, h, width, height)
        except GeometryError as e:
            rejected.append({"annotation_id": record.id,
                             "image_id": record.image_id,
                             "error": e.description})
            continue
        pairs[record.image_id].append((box, table[record.category_id]))
        records.append(record)
    if rejected:
        logger.warning(f"Skipped {len(rejected)} malformed annotations in "
                       f"{path}")
    logger.info(f"Loaded {len(images)} images and {len(records)} annotations "
                f"from {path}")
    return Corpus(images=images, categories=categories, category_table=table,
                  annotations={k: Fully(tuple(v)) for k, v in pairs.items()},
                  records=tuple(records), rejected=tuple(rejected))


def save_coco(corpus: Corpus, path):
    """Write a corpus back as a COCO-style file; pixel boxes are kept."""
    annotations = []
    for record in corpus.records:
        payload = {"id": record.id, "image_id": record.image_id,
                   "category_id": record.category_id,
                   "bbox": [_number(v) for v in record.bbox],
                   "iscrowd": record.iscrowd}
        if record.area is not None:
            payload["area"] = _number(record.area)
        annotations.append(payload)
    _write_json({"version": FILE_FORMAT_VERSION,
                 "images": [_image_dict(i) for i in corpus.images],
                 "categories": [_category_dict(c) for c in corpus.categories],
                 "annotations": annotations}, path)


# Teacher predictions

def load_predictions(path):
    """Stream TeacherPrediction objects from a JSONL file, one per line."""
    path = Path(path)
    schema = PredictionSchema()
    with open(path, "r", encoding="utf-8") as file:
        for number, line in enumerate(file, start=1):
            if not line.strip():
                continue
            try:
                yield schema.load(json.loads(line))
            except json.JSONDecodeError as e:
                raise PredictionError(f"{path}:{number} is not valid JSON: "
                                      f"{e}")
            except ValidationError as e:
                raise PredictionError(f"{path}:{number} is not a valid "
                                      f"prediction", details=[e.messages])


def prediction_to_dict(pred):
    return {"version": FILE_FORMAT_VERSION, "image_id": pred.image_id,
            "K": pred.num_queries, "C": pred.num_classes,
            "logits": pred.logits.tolist(),
            "boxes_cxcywh": pred.boxes.tolist()}


def save_predictions(predictions, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as file:
        for pred in predictions:
            file.write(json.dumps(prediction_to_dict(pred), sort_keys=True,
                                  allow_nan=False))
            file.write("\n")
    logger.info(f"Wrote {path}")


# Omni-labels

def load_omni_labels(path) -> OmniLabelFile:
    data = OmniLabelFileSchema().load(_read_json(path))
    labels = {}
    for image_id, label in data["labels"]:
        if image_id in labels:
            raise LabelError(f"Image {image_id!r} is labeled twice in {path}")
        labels[image_id] = label
    return OmniLabelFile(images=tuple(data["images"]),
                         categories=tuple(data["categories"]), labels=labels)


def save_omni_labels(labels, path, images=(), categories=()):
    """Write a map of image id -> OmniLabel, sorted by image id."""
    for image_id, label in labels.items():
        if not isinstance(label, OmniLabel):
            raise LabelError(f"Image {image_id!r} has no omni-label")
    _write_json({
        "version": FILE_FORMAT_VERSION,
        "images": [_image_dict(i) for i in images],
        "categories": [_category_dict(c) for c in categories],
        "labels": [label_to_payload(i, labels[i])
                   for i in sorted(labels, key=id_sort_key)],
    }, path)


# Pseudo labels

def save_pseudo(labels, path, images=None, categories=None):
    """Write pseudo labels as a COCO-compatible annotation file.

    Every annotation carries the pixel ``bbox``, the exact normalized
    ``bbox_cxcywh``, the dense ``class_id`` and the filter's ``score``,
    ``source_query``, ``target_index``, ``cost`` and ``infeasible`` fields.
    ``pseudo_images`` lists every image, including those without pseudo
    labels.

    Args:
        labels: Mapping of image id -> PseudoLabelSet
        path: Output file
        images: ImageInfo records; images not listed are treated as 1 x 1
            with a warning, so their pixel boxes stay normalized
        categories: Category records in dense class order
    """
    sizes = {image.id: (image.width, image.height) for image in images or ()}
    unsized = sorted((i for i in labels if i not in sizes), key=id_sort_key)
    if unsized:
        logger.warning(f"No size for {len(unsized)} images, first "
                       f"{unsized[0]!r}; their pixel boxes are normalized")
    categories = tuple(categories or ())
    pseudo_images, annotations = [], []
    for image_id in sorted(labels, key=id_sort_key):
        pseudo: PseudoLabelSet = labels[image_id]
        pseudo_images.append({
            "image_id": image_id,
            "label_format": pseudo.label_format.value,
            "total_cost": (None if pseudo.total_cost is None
                           else float(pseudo.total_cost)),
        })
        width, height = sizes.get(image_id, (1, 1))
        for item in pseudo.items:
            class_id = int(item.class_id)
            category_id = (categories[class_id].id if categories
                           else class_id)
            box = item.box
            annotations.append({
                "id": len(annotations) + 1,
                "image_id": image_id,
                "category_id": category_id,
                "class_id": class_id,
                "bbox": [float(v) for v in box.to_pixel_xywh(width, height)],
                "bbox_cxcywh": [float(box.cx), float(box.cy), float(box.w),
                                float(box.h)],
                "score": float(item.score),
                "source_query": int(item.source_query),
                "target_index": (None if item.target_index is None
                                 else int(item.target_index)),
                "cost": None if item.cost is None else float(item.cost),
                "infeasible": bool(item.infeasible),
            })
    _write_json({
        "version": FILE_FORMAT_VERSION,
        "images": [_image_dict(i) for i in
                   sorted(images or (), key=lambda i: id_sort_key(i.id))],
        "categories": [_category_dict(c) for c in categories],
        "pseudo_images": pseudo_images,
        "annotations": annotations,
    }, path)


def load_pseudo(path):
    """Read a pseudo-label file back into image id -> PseudoLabelSet."""
    data = PseudoFileSchema().load(_read_json(path))
    headers = {}
    for header in data["pseudo_images"]:
        headers[header["image_id"]] = header
    items = {image_id: [] for image_id in headers}
    for image_id, item in data["annotations"]:
        if image_id not in items:
            raise CorpusError(f"Pseudo label for unlisted image {image_id!r}")
        items[image_id].append(item)
    return {image_id: PseudoLabelSet(
        items=tuple(items[image_id]), image_id=image_id,
        label_format=LabelFormat.parse(header["label_format"]),
        total_cost=header["total_cost"])
        for image_id, header in headers.items()}


# Small files

def load_stats(path):
    """Read dataset statistics ``{name, C, C_avg, I_avg[, size]}``."""
    return DatasetStatsSchema().load(_read_json(path))


def load_noise(path):
    return NoiseModelSchema().load(_read_json(path))


def save_noise(noise, path):
    _write_json({"version": FILE_FORMAT_VERSION,
                 "sigma_scale": float(noise.sigma_scale),
                 "seed": int(noise.seed),
                 "dispersion": float(noise.dispersion)}, path)


def load_snapshot(path) -> ParamVector:
    """Read a parameter snapshot from ``.npz`` or JSON."""
    path = Path(path)
    if path.suffix == ".npz":
        with np.load(path, allow_pickle=False) as archive:
            missing = {"values", "param_version"} - set(archive.files)
            if missing:
                raise InputError(f"{path} lacks {sorted(missing)}")
            version = int(archive["version"]) if "version" in archive.files \
                else FILE_FORMAT_VERSION
            if version != FILE_FORMAT_VERSION:
                raise InputError(f"{path} has unsupported version {version}")
            return ParamVector(values=archive["values"],
                               version=int(archive["param_version"]))
    return SnapshotSchema().load(_read_json(path))


def save_snapshot(vector: ParamVector, path):
    """Write a parameter snapshot; ``.npz`` paths get a numpy archive."""
    path = Path(path)
    if path.suffix == ".npz":
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savez(path, values=vector.values,
                 param_version=np.int64(vector.version),
                 version=np.int64(FILE_FORMAT_VERSION))
        logger.info(f"Wrote {path}")
        return
    _write_json({"version": FILE_FORMAT_VERSION,
                 "param_version": vector.version,
                 "values": [float(v) for v in vector.values]}, path)

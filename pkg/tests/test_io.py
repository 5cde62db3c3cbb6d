import json
import logging

import numpy as np
import pytest
from marshmallow import ValidationError

from conftest import write_json
from src.annotation import (BoxesEC, BoxesU, Fully, NoiseModel, NoneLabel,
                            PointsK, PointsU, TagsK, TagsU)
from src.ema import ParamVector
from src.exceptions import CorpusError, InputError, LabelError, PredictionError
from src.filtering import PseudoLabelSet, passthrough
from src.geometry import BoundingBox, Point2D
from src.io import (Corpus, load_coco, load_noise, load_omni_labels,
                    load_predictions, load_pseudo, load_snapshot, load_stats,
                    save_coco, save_noise, save_omni_labels, save_predictions,
                    save_pseudo, save_snapshot)
from src.schemas import Category, ImageInfo


def test_load_coco_normalizes_boxes(coco_file):
    """
    GIVEN a COCO file with a 60 x 60 pixel box at (30, 30) in a 300 x 300
    image
    WHEN the file is loaded
    THEN the box is (0.2, 0.2, 0.2, 0.2) and categories map to dense indices
    in id order
    """
    corpus = load_coco(coco_file)
    assert corpus.image_ids == [1, 2, 3]
    assert corpus.category_table == {3: 0, 7: 1}
    assert [c.name for c in corpus.categories] == ["cat", "dog"]
    assert corpus.num_classes == 2

    box, class_id = corpus.annotations[1].pairs[0]
    assert class_id == 0
    assert (box.cx, box.cy, box.w, box.h) == pytest.approx((0.2, 0.2, 0.2, 0.2))
    dog, class_id = corpus.annotations[1].pairs[1]
    assert class_id == 1
    assert (dog.cx, dog.cy, dog.w, dog.h) == pytest.approx((0.65, 0.55, 0.3,
                                                            0.1))
    assert corpus.image(2).width == 200
    assert corpus.rejected == ()


def test_unknown_image_id_is_reported(tmp_path, coco_payload):
    """
    GIVEN an annotation that references an image missing from the file
    WHEN the file is loaded
    THEN a CorpusError lists the offending annotation
    """
    coco_payload["annotations"][0]["image_id"] = 99
    path = write_json(tmp_path / "bad.json", coco_payload)
    with pytest.raises(CorpusError) as excinfo:
        load_coco(path)
    assert excinfo.value.details == ["annotation 1: unknown image_id 99"]
    assert excinfo.value.to_dict()["code"] == 2


def test_unknown_category_is_reported(tmp_path, coco_payload):
    coco_payload["annotations"][2]["category_id"] = 5
    path = write_json(tmp_path / "bad.json", coco_payload)
    with pytest.raises(CorpusError, match="unknown category_id 5"):
        load_coco(path)


def test_duplicate_image_ids_are_rejected(tmp_path, coco_payload):
    coco_payload["images"][2]["id"] = 1
    path = write_json(tmp_path / "dup.json", coco_payload)
    with pytest.raises(CorpusError, match="Duplicate image id 1"):
        load_coco(path)


def test_degenerate_boxes_are_skipped(tmp_path, coco_payload):
    """
    GIVEN an annotation with zero width
    WHEN the file is loaded
    THEN that annotation is listed as rejected and the rest are kept
    """
    coco_payload["annotations"][2]["bbox"] = [20, 10, 0, 50]
    path = write_json(tmp_path / "thin.json", coco_payload)
    corpus = load_coco(path)
    assert len(corpus.rejected) == 1
    assert corpus.rejected[0]["annotation_id"] == 3
    assert corpus.annotations[2].size == 0
    assert len(corpus.records) == 3


def test_invalid_json_is_an_input_error(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{\"images\": [", encoding="utf-8")
    with pytest.raises(InputError):
        load_coco(path)


def test_unsupported_version_fails_validation(tmp_path, coco_payload):
    coco_payload["version"] = 2
    path = write_json(tmp_path / "v2.json", coco_payload)
    with pytest.raises(ValidationError):
        load_coco(path)


def test_saved_corpus_is_byte_stable(tmp_path, coco_file):
    """
    GIVEN a loaded COCO file
    WHEN it is saved, loaded and saved again
    THEN both saved files are identical and hold the same annotations
    """
    corpus = load_coco(coco_file)
    first, second = tmp_path / "first.json", tmp_path / "second.json"
    save_coco(corpus, first)
    reloaded = load_coco(first)
    save_coco(reloaded, second)
    assert first.read_bytes() == second.read_bytes()
    assert reloaded.annotations == corpus.annotations
    assert json.loads(first.read_text())["version"] == 1


def test_corpus_from_labels(tmp_path, synthetic):
    images, categories, labels, _ = synthetic
    corpus = Corpus.from_labels(images, categories, labels)
    assert corpus.category_table[categories[0].id] == 0
    save_coco(corpus, tmp_path / "synthetic.json")
    loaded = load_coco(tmp_path / "synthetic.json")
    assert loaded.image_ids == list(labels)
    for image_id, label in labels.items():
        got = loaded.annotations[image_id]
        assert got.classes == label.classes
        for a, b in zip(got.boxes, label.boxes):
            assert a.to_array() == pytest.approx(b.to_array(), abs=1e-9)


def test_predictions_file_layout(tmp_path, synthetic):
    """
    GIVEN teacher predictions
    WHEN they are saved and streamed back
    THEN every line carries K, C, logits and boxes_cxcywh and the arrays come
    back unchanged
    """
    predictions = synthetic[3][:5]
    path = tmp_path / "preds.jsonl"
    save_predictions(predictions, path)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert len(lines) == 5
    first = json.loads(lines[0])
    assert set(first) == {"version", "image_id", "K", "C", "logits",
                          "boxes_cxcywh"}
    assert (first["K"], first["C"]) == (8, 5)

    loaded = list(load_predictions(path))
    for want, got in zip(predictions, loaded):
        assert got.image_id == want.image_id
        assert np.array_equal(got.logits, want.logits)
        assert np.array_equal(got.boxes, want.boxes)


def test_prediction_errors_name_the_line(tmp_path):
    good = {"image_id": 1, "logits": [[0.0, 1.0]],
            "boxes_cxcywh": [[0.5, 0.5, 0.1, 0.1]]}
    path = tmp_path / "preds.jsonl"
    path.write_text(json.dumps(good) + "\n\n{not json\n", encoding="utf-8")
    with pytest.raises(PredictionError, match=r":3 is not valid JSON"):
        list(load_predictions(path))


@pytest.mark.parametrize("record", [
    {"image_id": 1, "K": 3, "logits": [[0.0, 1.0]],
     "boxes_cxcywh": [[0.5, 0.5, 0.1, 0.1]]},
    {"image_id": 1, "C": 3, "logits": [[0.0, 1.0]],
     "boxes_cxcywh": [[0.5, 0.5, 0.1, 0.1]]},
    {"image_id": 1, "logits": [[0.0, 1.0], [1.0, 0.0]],
     "boxes_cxcywh": [[0.5, 0.5, 0.1, 0.1]]},
    {"image_id": 1, "logits": [[0.0, 1.0]],
     "boxes_cxcywh": [[0.5, 0.5, 0.0, 0.1]]},
    {"image_id": 1.5, "logits": [[0.0, 1.0]],
     "boxes_cxcywh": [[0.5, 0.5, 0.1, 0.1]]},
])
def test_invalid_prediction_records(tmp_path, record):
    path = tmp_path / "preds.jsonl"
    path.write_text(json.dumps(record) + "\n", encoding="utf-8")
    with pytest.raises(PredictionError, match=r":1 is not a valid") as excinfo:
        list(load_predictions(path))
    assert excinfo.value.details


def test_omni_label_file_keeps_every_format(tmp_path):
    """
    GIVEN one label of every format, with integer and string image ids
    WHEN they are saved and loaded
    THEN the same labels come back and the file lists them by image id
    """
    box = BoundingBox(0.5, 0.5, 0.2, 0.2)
    labels = {
        8: Fully(((box, 0), (BoundingBox(0.25, 0.75, 0.1, 0.3), 2))),
        1: NoneLabel(),
        2: TagsU((0, 2)),
        3: TagsK(((1, 2), (4, 1))),
        4: PointsU((Point2D(0.1, 0.2),)),
        5: PointsK(((Point2D(0.3, 0.4), 1), (Point2D(0.0, 1.0), 1))),
        6: BoxesU((box,)),
        7: BoxesEC((BoundingBox(0.123456789, 0.5, 0.3, 0.2),)),
        "img-9": TagsK(()),
    }
    images = [ImageInfo(id=1, width=640, height=480, file_name="x.jpg")]
    categories = [Category(id=1, name="person")]
    path = tmp_path / "labels.json"
    save_omni_labels(labels, path, images=images, categories=categories)

    payload = json.loads(path.read_text(encoding="utf-8"))
    assert [entry["image_id"] for entry in payload["labels"]] == \
        [1, 2, 3, 4, 5, 6, 7, 8, "img-9"]
    assert payload["labels"][2]["tags"] == [{"class": 1, "count": 2},
                                           {"class": 4, "count": 1}]

    loaded = load_omni_labels(path)
    assert loaded.labels == labels
    assert loaded.images == tuple(images)
    assert loaded.categories == tuple(categories)


def test_duplicate_omni_labels_are_rejected(tmp_path):
    entry = {"image_id": 1, "format": "tags_u", "classes": [0]}
    path = write_json(tmp_path / "labels.json", {"labels": [entry, entry]})
    with pytest.raises(LabelError, match="labeled twice"):
        load_omni_labels(path)


@pytest.mark.parametrize("entry", [
    {"image_id": 1, "format": "fully", "boxes": [[0.5, 0.5, 0.1, 0.1]]},
    {"image_id": 1, "format": "fully", "boxes": [[0.5, 0.5, 0.1, 0.1]],
     "classes": [0, 1]},
    {"image_id": 1, "format": "points_u"},
    {"image_id": 1, "format": "tags_u", "classes": [0, 0]},
    {"image_id": 1, "format": "scribbles"},
])
def test_malformed_omni_labels_fail_validation(tmp_path, entry):
    path = write_json(tmp_path / "labels.json", {"labels": [entry]})
    with pytest.raises(ValidationError):
        load_omni_labels(path)


def test_save_omni_labels_needs_labels(tmp_path):
    with pytest.raises(LabelError):
        save_omni_labels({1: "fully"}, tmp_path / "labels.json")


def test_empty_pseudo_file(tmp_path):
    path = tmp_path / "pseudo.json"
    save_pseudo({}, path)
    payload = json.loads(path.read_text(encoding="utf-8"))
    assert payload["version"] == 1
    assert payload["annotations"] == []
    assert payload["pseudo_images"] == []
    assert load_pseudo(path) == {}


def test_pseudo_file_contents(tmp_path):
    """
    GIVEN pseudo labels for a 200 x 100 image
    WHEN they are saved
    THEN annotations carry pixel boxes, category ids and the exact normalized
    box, and loading gives the same pseudo labels back
    """
    full = Fully(((BoundingBox(0.5, 0.5, 0.2, 0.2), 1),))
    labels = {1: passthrough(full, 1),
              2: PseudoLabelSet(image_id=2)}
    images = [ImageInfo(id=2, width=50, height=50),
              ImageInfo(id=1, width=200, height=100)]
    categories = [Category(id=3, name="cat"), Category(id=7, name="dog")]
    path = tmp_path / "pseudo.json"
    save_pseudo(labels, path, images=images, categories=categories)

    payload = json.loads(path.read_text(encoding="utf-8"))
    assert [i["id"] for i in payload["images"]] == [1, 2]
    assert [h["image_id"] for h in payload["pseudo_images"]] == [1, 2]
    (annotation,) = payload["annotations"]
    assert annotation["category_id"] == 7
    assert annotation["class_id"] == 1
    assert annotation["bbox"] == pytest.approx([80.0, 40.0, 40.0, 20.0])
    assert annotation["bbox_cxcywh"] == [0.5, 0.5, 0.2, 0.2]
    assert annotation["source_query"] == -1
    assert annotation["infeasible"] is False

    assert load_pseudo(path) == labels



def test_pseudo_images_without_a_size_are_reported(tmp_path, caplog):
    """
    GIVEN pseudo labels for an image missing from the image list
    WHEN they are saved
    THEN a warning names the image and its pixel box stays normalized
    """
    full = Fully(((BoundingBox(0.5, 0.5, 0.2, 0.2), 0),))
    path = tmp_path / "pseudo.json"
    with caplog.at_level(logging.WARNING, logger="src.io"):
        save_pseudo({"x": passthrough(full, "x")}, path)
    assert "No size for 1 images, first 'x'" in caplog.text
    payload = json.loads(path.read_text(encoding="utf-8"))
    assert payload["annotations"][0]["bbox"] == pytest.approx(
        [0.4, 0.4, 0.2, 0.2])


def test_label_boxes_are_clamped_on_load(tmp_path):
    """
    GIVEN a boxes_u label whose box runs past the right image edge and one
    lying wholly outside the image
    WHEN the label files are loaded
    THEN the first box is cut at x = 1 and the second file is rejected
    """
    inside = write_json(tmp_path / "inside.json", {"labels": [
        {"image_id": 1, "format": "boxes_u",
         "boxes": [[0.875, 0.5, 0.5, 0.25]]}]})
    (box,) = load_omni_labels(inside).labels[1].boxes
    assert (box.cx, box.cy, box.w, box.h) == (0.8125, 0.5, 0.375, 0.25)

    outside = write_json(tmp_path / "outside.json", {"labels": [
        {"image_id": 1, "format": "boxes_u",
         "boxes": [[1.5, 0.5, 0.2, 0.2]]}]})
    with pytest.raises(ValidationError):
        load_omni_labels(outside)

def test_pseudo_labels_for_unlisted_images_are_rejected(tmp_path):
    payload = {"pseudo_images": [],
               "annotations": [{"image_id": 4, "class_id": 0,
                                "bbox_cxcywh": [0.5, 0.5, 0.1, 0.1],
                                "score": 0.9, "source_query": 2}]}
    path = write_json(tmp_path / "pseudo.json", payload)
    with pytest.raises(CorpusError):
        load_pseudo(path)


@pytest.mark.parametrize("name", ["teacher.json", "teacher.npz"])
def test_snapshot_files(tmp_path, name):
    vector = ParamVector([1.0, -2.5, 3.25e-7], version=3)
    path = tmp_path / name
    save_snapshot(vector, path)
    loaded = load_snapshot(path)
    assert np.array_equal(loaded.values, vector.values)
    assert loaded.version == 3


def test_snapshot_archive_needs_its_keys(tmp_path):
    path = tmp_path / "bare.npz"
    np.savez(path, values=np.zeros(3))
    with pytest.raises(InputError):
        load_snapshot(path)


def test_load_stats(tmp_path):
    path = write_json(tmp_path / "stats.json",
                      {"name": "Toy", "C": 3, "C_avg": 1.5, "I_avg": 2.0})
    stats = load_stats(path)
    assert stats.name == "toy"
    assert (stats.num_classes, stats.avg_classes, stats.avg_instances) == \
        (3, 1.5, 2.0)
    assert stats.size is None


def test_noise_file(tmp_path):
    noise = NoiseModel(sigma_scale=0.05, seed=3, dispersion=0.5)
    path = tmp_path / "noise.json"
    save_noise(noise, path)
    assert load_noise(path) == noise

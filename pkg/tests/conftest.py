import json
import logging

import numpy as np
import pytest
from click.testing import CliRunner
from faker import Faker

from src.annotation import Fully
from src.cli import run
from src.config import create_config
from src.geometry import BoundingBox
from src.prediction import TeacherPrediction
from src.schemas import Category, ImageInfo


def make_prediction(probs=None, boxes=None, logits=None, image_id=0):
    """Build a TeacherPrediction from probability rows or logits.

    Probability rows are turned into logits with log(), so scoring gives the
    same probabilities back.
    """
    if logits is None:
        logits = np.log(np.asarray(probs, dtype=float))
    logits = np.asarray(logits, dtype=float)
    if boxes is None:
        boxes = [[0.5, 0.5, 0.2, 0.2]] * logits.shape[0]
    return TeacherPrediction(logits=logits, boxes=np.asarray(boxes, float),
                             image_id=image_id)


def box_from_corners(x0, y0, x1, y1, scale=1.0):
    return BoundingBox.from_xyxy(x0 / scale, y0 / scale, x1 / scale,
                                 y1 / scale, clamp=False)


def synthetic_corpus(fake, num_images=50, num_classes=5, num_queries=8,
                     max_objects=5, seed=0):
    """A fully labeled corpus and teacher predictions that cover it.

    Every ground-truth box appears unchanged among its image's queries, so
    interior points always have at least one feasible prediction.

    Returns:
        (images, categories, labels, predictions)
    """
    rng = np.random.default_rng(seed)
    categories = [Category(id=10 * (i + 1), name=fake.unique.word(),
                           supercategory="thing")
                  for i in range(num_classes)]
    images, labels, predictions = [], [], []
    for image_id in range(1, num_images + 1):
        images.append(ImageInfo(id=image_id,
                                width=int(rng.integers(200, 800)),
                                height=int(rng.integers(200, 800)),
                                file_name=fake.file_name(extension="jpg")))
        count = int(rng.integers(1, max_objects + 1))
        sides = rng.uniform(0.05, 0.4, (count, 2))
        centers = rng.uniform(sides / 2, 1 - sides / 2)
        gt = np.hstack([centers, sides])
        classes = rng.integers(0, num_classes, count)
        labels.append(Fully(tuple((BoundingBox.from_array(b), int(c))
                                  for b, c in zip(gt, classes))))

        others = rng.uniform(0.05, 0.4, (num_queries - count, 2))
        other_centers = rng.uniform(others / 2, 1 - others / 2)
        boxes = np.vstack([gt, np.hstack([other_centers, others])])
        logits = rng.normal(0.0, 1.5, (num_queries, num_classes))
        logits[np.arange(count), classes] += 3.0
        order = rng.permutation(num_queries)
        predictions.append(TeacherPrediction(logits=logits[order],
                                             boxes=boxes[order],
                                             image_id=image_id))
    return images, categories, dict(zip(range(1, num_images + 1), labels)), \
        predictions


def write_json(path, payload):
    with open(path, "w", encoding="utf-8") as file:
        json.dump(payload, file)
    return path


@pytest.fixture()
def fake():
    """Faker with a fixed seed so synthetic names repeat between runs."""
    fake = Faker()
    fake.seed_instance(1234)
    return fake


@pytest.fixture()
def config():
    return create_config(test_config={"SEED": 7, "WORKERS": 1})


@pytest.fixture()
def runner():
    return CliRunner()


@pytest.fixture()
def cli_run():
    """Run the command line in-process and return its exit status.

    The root logger is restored afterwards since every run reconfigures it.
    """
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level

    def invoke(*args):
        return run([str(a) for a in args])

    yield invoke

    for handler in root.handlers:
        if handler not in handlers:
            handler.close()
    root.handlers[:] = handlers
    root.setLevel(level)


# A three-image COCO file with known pixel boxes
@pytest.fixture()
def coco_payload():
    return {
        "images": [
            {"id": 1, "width": 300, "height": 300, "file_name": "a.jpg"},
            {"id": 2, "width": 200, "height": 100, "file_name": "b.jpg"},
            {"id": 3, "width": 100, "height": 100, "file_name": "c.jpg"},
        ],
        "categories": [
            {"id": 7, "name": "dog"},
            {"id": 3, "name": "cat", "supercategory": "animal"},
        ],
        "annotations": [
            {"id": 1, "image_id": 1, "category_id": 3,
             "bbox": [30, 30, 60, 60], "iscrowd": 0},
            {"id": 2, "image_id": 1, "category_id": 7,
             "bbox": [150, 150, 90, 30]},
            {"id": 3, "image_id": 2, "category_id": 7,
             "bbox": [20, 10, 40, 50]},
            {"id": 4, "image_id": 3, "category_id": 3,
             "bbox": [0, 0, 50, 50]},
        ],
    }


@pytest.fixture()
def coco_file(tmp_path, coco_payload):
    return write_json(tmp_path / "coco.json", coco_payload)


@pytest.fixture()
def synthetic(fake):
    return synthetic_corpus(fake)

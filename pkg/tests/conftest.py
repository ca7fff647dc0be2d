import json
import math

import numpy as np
import pytest

from headplan.annotations import Dataset, ImageRecord, ObjectBox


def make_dataset(areas, width_o=1280, height_o=720, category="car") -> Dataset:
    """One-image dataset with a square box per requested area."""
    boxes = []
    for a in areas:
        s = math.sqrt(a)
        boxes.append(ObjectBox(category, 1.0, 1.0, 1.0 + s, 1.0 + s))
    img = ImageRecord("img0", width_o, height_o, tuple(boxes))
    return Dataset((img,), frozenset({category}), "bdd")


def random_areas(n, seed, low=1.0, high=10000.0):
    rng = np.random.default_rng(seed)
    return rng.uniform(low, high, size=n).tolist()


@pytest.fixture
def bdd_file(tmp_path):
    """Writer: bdd_file(frames) -> path."""

    def write(frames, name="labels.json"):
        p = tmp_path / name
        p.write_text(json.dumps(frames), encoding="utf-8")
        return p

    return write


@pytest.fixture
def coco_file(tmp_path):
    def write(doc, name="coco.json"):
        p = tmp_path / name
        p.write_text(json.dumps(doc), encoding="utf-8")
        return p

    return write


def square_label(x, y, side, category="car"):
    return {"category": category,
            "box2d": {"x1": x, "y1": y, "x2": x + side, "y2": y + side}}

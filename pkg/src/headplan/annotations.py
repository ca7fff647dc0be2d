"""Annotation ingestion.

Loads object-detection ground truth from two common JSON layouts (a
frame-oriented "bdd" style and an index-oriented "coco" style) into one
immutable in-memory dataset model, applying a single clamp/drop policy:
boxes are clamped to image bounds, then zero-area boxes are dropped, and
both events are counted so nothing mutates silently.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence


class AnnotationError(ValueError):
    """Raised for malformed or referentially broken annotation files."""


DEFAULT_IMAGE_SIZE = (1280, 720)


@dataclass(frozen=True)
class ObjectBox:
    """One ground-truth box in original-image pixel coordinates."""

    category: str
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (self.x2 > self.x1 and self.y2 > self.y1):
            raise AnnotationError(
                f"degenerate box ({self.x1},{self.y1},{self.x2},{self.y2})"
            )
        for v in (self.x1, self.y1, self.x2, self.y2):
            if not math.isfinite(v):
                raise AnnotationError("non-finite box coordinate")

    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)


@dataclass(frozen=True)
class ImageRecord:
    """One image with its size and kept boxes."""

    image_id: str
    width_o: int
    height_o: int
    boxes: tuple[ObjectBox, ...]

    def __post_init__(self):
        if self.width_o < 1 or self.height_o < 1:
            raise AnnotationError(f"image {self.image_id}: non-positive size")
        for b in self.boxes:
            if not (0 <= b.x1 < b.x2 <= self.width_o and 0 <= b.y1 < b.y2 <= self.height_o):
                raise AnnotationError(
                    f"image {self.image_id}: box outside bounds after clamping"
                )


@dataclass(frozen=True)
class LoadCounters:
    """Bookkeeping from one load: raw = kept + skipped_no_box + dropped_degenerate."""

    raw_labels: int = 0
    skipped_no_box: int = 0
    dropped_degenerate: int = 0
    clamped: int = 0
    filtered_category: int = 0

    def warnings(self) -> list[str]:
        out = []
        if self.dropped_degenerate:
            out.append(f"dropped {self.dropped_degenerate} degenerate box(es)")
        if self.clamped:
            out.append(f"clamped {self.clamped} out-of-bounds box(es)")
        if self.skipped_no_box:
            out.append(f"skipped {self.skipped_no_box} label(s) without a box")
        if self.filtered_category:
            out.append(f"filtered {self.filtered_category} box(es) by category")
        return out


@dataclass(frozen=True)
class Dataset:
    """Immutable dataset: images, category set, and load bookkeeping.

    ``counters`` is excluded from equality so a round-trip through the
    normalized form compares equal to the original.
    """

    images: tuple[ImageRecord, ...]
    categories: frozenset[str]
    source_format: str
    counters: LoadCounters = field(default_factory=LoadCounters, compare=False)

    def __post_init__(self):
        for img in self.images:
            for b in img.boxes:
                if b.category not in self.categories:
                    raise AnnotationError(f"category {b.category!r} missing from set")

    @property
    def n_boxes(self) -> int:
        return sum(len(img.boxes) for img in self.images)

    def iter_boxes(self) -> Iterable[tuple[ImageRecord, ObjectBox]]:
        for img in self.images:
            for b in img.boxes:
                yield img, b


def _clamp_box(category: str, x1: float, y1: float, x2: float, y2: float,
               width: int, height: int) -> tuple[Optional[ObjectBox], bool]:
    """Clamp corners to the image, returning (box-or-None, was_clamped).

    None means the box collapsed to zero width or height.  Applying the
    clamp twice equals applying it once (idempotent).
    """
    cx1 = min(max(x1, 0.0), float(width))
    cy1 = min(max(y1, 0.0), float(height))
    cx2 = min(max(x2, 0.0), float(width))
    cy2 = min(max(y2, 0.0), float(height))
    clamped = (cx1, cy1, cx2, cy2) != (x1, y1, x2, y2)
    if not (cx2 > cx1 and cy2 > cy1):
        return None, clamped
    return ObjectBox(category, cx1, cy1, cx2, cy2), clamped


def _read_json(path) -> object:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise AnnotationError(f"cannot read {path}: {e}") from e
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise AnnotationError(f"{path}: not valid JSON ({e})") from e


def load_bdd(path, default_image_size: tuple[int, int] = DEFAULT_IMAGE_SIZE,
             allow_categories: Optional[Sequence[str]] = None) -> Dataset:
    """Load a frame-oriented label file (array of frames with box2d labels).

    Frames omit image dimensions in the common export, so
    ``default_image_size`` (width, height) is used unless the frame
    carries explicit ``width``/``height`` fields.
    """
    doc = _read_json(path)
    if not isinstance(doc, list):
        raise AnnotationError(f"{path}: expected a top-level array of frames")
    allow = set(allow_categories) if allow_categories is not None else None

    raw = skipped = dropped = clamped_n = filtered = 0
    images = []
    categories = set()
    for i, frame in enumerate(doc):
        if not isinstance(frame, dict) or "name" not in frame:
            raise AnnotationError(f"{path}: frame #{i} has no name")
        width = int(frame.get("width", default_image_size[0]))
        height = int(frame.get("height", default_image_size[1]))
        boxes = []
        for label in frame.get("labels") or []:
            raw += 1
            box2d = label.get("box2d")
            if box2d is None:
                skipped += 1
                continue
            if "category" not in label:
                raise AnnotationError(f"{path}: frame {frame['name']!r} label without category")
            cat = str(label["category"])
            if allow is not None and cat not in allow:
                filtered += 1
                continue
            try:
                corners = (float(box2d["x1"]), float(box2d["y1"]),
                           float(box2d["x2"]), float(box2d["y2"]))
            except (KeyError, TypeError, ValueError) as e:
                raise AnnotationError(f"{path}: frame {frame['name']!r} malformed box2d") from e
            box, was_clamped = _clamp_box(cat, *corners, width, height)
            clamped_n += was_clamped
            if box is None:
                dropped += 1
                continue
            boxes.append(box)
            categories.add(cat)
        images.append(ImageRecord(str(frame["name"]), width, height, tuple(boxes)))

    counters = LoadCounters(raw, skipped, dropped, clamped_n, filtered)
    return Dataset(tuple(images), frozenset(categories), "bdd", counters)


def load_coco(path, allow_categories: Optional[Sequence[str]] = None) -> Dataset:
    """Load an index-oriented file (images / annotations / categories arrays).

    Boxes arrive as (x, y, w, h) and are converted to corner form before
    the shared clamp/drop policy is applied.
    """
    doc = _read_json(path)
    if not isinstance(doc, dict):
        raise AnnotationError(f"{path}: expected a top-level object")
    for key in ("images", "annotations", "categories"):
        if key not in doc or not isinstance(doc[key], list):
            raise AnnotationError(f"{path}: missing {key!r} array")
    allow = set(allow_categories) if allow_categories is not None else None

    cat_by_id = {}
    for c in doc["categories"]:
        try:
            cat_by_id[c["id"]] = str(c["name"])
        except (KeyError, TypeError) as e:
            raise AnnotationError(f"{path}: malformed category entry") from e

    img_meta = {}
    order = []
    for im in doc["images"]:
        try:
            img_meta[im["id"]] = (int(im["width"]), int(im["height"]))
        except (KeyError, TypeError, ValueError) as e:
            raise AnnotationError(f"{path}: malformed image entry") from e
        order.append(im["id"])

    raw = skipped = dropped = clamped_n = filtered = 0
    boxes_by_img: dict = {iid: [] for iid in order}
    categories = set()
    for ann in doc["annotations"]:
        raw += 1
        iid = ann.get("image_id")
        if iid not in img_meta:
            raise AnnotationError(f"{path}: annotation references unknown image_id {iid!r}")
        cid = ann.get("category_id")
        if cid not in cat_by_id:
            raise AnnotationError(f"{path}: annotation references unknown category_id {cid!r}")
        bbox = ann.get("bbox")
        if bbox is None:
            skipped += 1
            continue
        if len(bbox) != 4:
            raise AnnotationError(f"{path}: bbox must have 4 values, got {bbox!r}")
        x, y, w, h = (float(v) for v in bbox)
        if w < 0 or h < 0:
            raise AnnotationError(f"{path}: negative bbox width/height {bbox!r}")
        cat = cat_by_id[cid]
        if allow is not None and cat not in allow:
            filtered += 1
            continue
        width, height = img_meta[iid]
        box, was_clamped = _clamp_box(cat, x, y, x + w, y + h, width, height)
        clamped_n += was_clamped
        if box is None:
            dropped += 1
            continue
        boxes_by_img[iid].append(box)
        categories.add(cat)

    images = tuple(
        ImageRecord(str(iid), img_meta[iid][0], img_meta[iid][1], tuple(boxes_by_img[iid]))
        for iid in order
    )
    counters = LoadCounters(raw, skipped, dropped, clamped_n, filtered)
    return Dataset(images, frozenset(categories), "coco", counters)


def quantile_nearest_rank(sorted_values: Sequence[float], p: float) -> float:
    """Lower nearest-rank quantile: element at 1-based rank ceil(p*N)."""
    n = len(sorted_values)
    if n == 0:
        raise ValueError("no values")
    rank = max(1, math.ceil(p * n))
    return sorted_values[min(rank, n) - 1]


def dataset_stats(d: Dataset) -> dict:
    """Deterministic summary: counts per category and area quantiles."""
    per_cat: dict[str, int] = {}
    areas = []
    for _, box in d.iter_boxes():
        per_cat[box.category] = per_cat.get(box.category, 0) + 1
        areas.append(box.area())
    areas.sort()
    stats = {
        "images": len(d.images),
        "boxes": len(areas),
        "boxes_per_category": {k: per_cat[k] for k in sorted(per_cat)},
    }
    if areas:
        stats["area_quantiles"] = {
            "min": areas[0],
            "p10": quantile_nearest_rank(areas, 0.10),
            "p25": quantile_nearest_rank(areas, 0.25),
            "p50": quantile_nearest_rank(areas, 0.50),
            "p75": quantile_nearest_rank(areas, 0.75),
            "p90": quantile_nearest_rank(areas, 0.90),
            "max": areas[-1],
        }
    else:
        stats["area_quantiles"] = None
    return stats


def save_normalized(d: Dataset, path) -> None:
    """Write the dataset in the normalized round-trip form (JSON)."""
    doc = {
        "format_version": 1,
        "source_format": d.source_format,
        "categories": sorted(d.categories),
        "images": [
            {
                "image_id": img.image_id,
                "width": img.width_o,
                "height": img.height_o,
                "boxes": [
                    {"category": b.category, "x1": b.x1, "y1": b.y1, "x2": b.x2, "y2": b.y2}
                    for b in img.boxes
                ],
            }
            for img in d.images
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def load_normalized(path) -> Dataset:
    """Reload a dataset written by :func:`save_normalized`."""
    doc = _read_json(path)
    try:
        images = tuple(
            ImageRecord(
                str(im["image_id"]),
                int(im["width"]),
                int(im["height"]),
                tuple(
                    ObjectBox(str(b["category"]), float(b["x1"]), float(b["y1"]),
                              float(b["x2"]), float(b["y2"]))
                    for b in im["boxes"]
                ),
            )
            for im in doc["images"]
        )
        return Dataset(images, frozenset(doc["categories"]), str(doc["source_format"]))
    except (KeyError, TypeError, ValueError) as e:
        raise AnnotationError(f"{path}: malformed normalized dataset") from e


def load_any(path, fmt: str, **kwargs) -> Dataset:
    """Dispatch on format name: 'bdd', 'coco', or 'normalized'."""
    if fmt == "bdd":
        return load_bdd(path, **kwargs)
    if fmt == "coco":
        return load_coco(path, **kwargs)
    if fmt == "normalized":
        return load_normalized(path)
    raise AnnotationError(f"unknown annotation format {fmt!r}")

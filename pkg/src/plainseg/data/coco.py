"""COCO-compatible annotation containers, JSON ingest/persist, rasterization.

Ground truth lives in a ``DatasetManifest`` (images / annotations /
categories). Parsing enforces the manifest invariants: every annotation must
reference an existing image and category, and its ``area``/``bbox`` are
recomputed from the decoded mask so they always agree with it. Polygon
segmentations are rasterized with the even-odd rule on pixel centers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import (
    DanglingReferenceError,
    DataError,
    MalformedRleError,
    MalformedSegmentationError,
    MissingFieldError,
)
from .geometry import BoundingBox
from .rle import RleMask


@dataclass(frozen=True)
class ImageInfo:
    id: int
    file_name: str
    height: int
    width: int


@dataclass(frozen=True)
class CategoryDef:
    id: int
    name: str
    is_rare: bool = False


@dataclass(frozen=True)
class InstanceAnnotation:
    """Ground-truth instance; ``area`` and ``bbox`` always mirror ``mask``."""

    id: int
    image_id: int
    category_id: int
    bbox: BoundingBox
    mask: RleMask
    area: int
    iscrowd: bool = False


@dataclass
class DatasetManifest:
    images: list[ImageInfo] = field(default_factory=list)
    annotations: list[InstanceAnnotation] = field(default_factory=list)
    categories: list[CategoryDef] = field(default_factory=list)

    def image_by_id(self) -> dict[int, ImageInfo]:
        return {im.id: im for im in self.images}

    def category_by_id(self) -> dict[int, CategoryDef]:
        return {c.id: c for c in self.categories}

    def annotations_for_image(self, image_id: int) -> list[InstanceAnnotation]:
        return [a for a in self.annotations if a.image_id == image_id]

    def validate(self) -> None:
        image_ids = {im.id for im in self.images}
        if len(image_ids) != len(self.images):
            raise DataError("duplicate image ids in manifest")
        category_ids = {c.id for c in self.categories}
        if len(category_ids) != len(self.categories):
            raise DataError("duplicate category ids in manifest")
        for c in self.categories:
            if c.id <= 0:
                raise DataError(f"category id must be positive, got {c.id}")
        for ann in self.annotations:
            if ann.image_id not in image_ids:
                raise DanglingReferenceError(
                    f"annotation {ann.id} references unknown image_id {ann.image_id}"
                )
            if ann.category_id not in category_ids:
                raise DanglingReferenceError(
                    f"annotation {ann.id} references unknown category_id {ann.category_id}"
                )


def polygons_to_mask(polygons: list[list[float]], height: int, width: int) -> np.ndarray:
    """Rasterize polygon rings to a binary mask.

    A pixel is foreground when its center (x + 0.5, y + 0.5) lies inside the
    polygon under the even-odd rule, evaluated over the edges of all rings
    jointly (so rings can carve holes).
    """
    if height <= 0 or width <= 0:
        raise DataError("mask dimensions must be positive")
    px = np.arange(width, dtype=np.float64) + 0.5
    py = np.arange(height, dtype=np.float64) + 0.5
    parity = np.zeros((height, width), dtype=bool)
    for ring in polygons:
        if len(ring) < 6 or len(ring) % 2 != 0:
            raise MalformedSegmentationError(
                f"polygon ring needs an even number of >= 6 coordinates, got {len(ring)}"
            )
        xs = np.asarray(ring[0::2], dtype=np.float64)
        ys = np.asarray(ring[1::2], dtype=np.float64)
        xj = np.roll(xs, 1)
        yj = np.roll(ys, 1)
        for xi, yi, xk, yk in zip(xs, ys, xj, yj):
            if yi == yk:
                continue
            straddles = (yi > py) != (yk > py)
            if not straddles.any():
                continue
            xcross = (xk - xi) * (py - yi) / (yk - yi) + xi
            parity ^= straddles[:, None] & (px[None, :] < xcross[:, None])
    return parity.astype(np.uint8)


def _require(obj: dict, key: str, where: str):
    if key not in obj:
        raise MissingFieldError(f"missing field '{key}' in {where}")
    return obj[key]


def _segmentation_to_mask(seg, height: int, width: int, where: str) -> RleMask:
    if isinstance(seg, list):
        if not seg or not all(isinstance(r, list) for r in seg):
            raise MalformedSegmentationError(
                f"{where}: polygon segmentation must be a non-empty list of rings"
            )
        return RleMask.from_dense(polygons_to_mask(seg, height, width))
    if isinstance(seg, dict):
        size = _require(seg, "size", where)
        counts = _require(seg, "counts", where)
        if isinstance(counts, str):
            raise MalformedSegmentationError(
                f"{where}: compressed counts strings are not supported, "
                "use integer run lengths"
            )
        if (not isinstance(size, list) or len(size) != 2
                or [int(size[0]), int(size[1])] != [height, width]):
            raise MalformedSegmentationError(
                f"{where}: RLE size {size} does not match image size "
                f"[{height}, {width}]"
            )
        try:
            return RleMask(height=height, width=width,
                           counts=tuple(int(c) for c in counts))
        except (MalformedRleError, TypeError, ValueError) as exc:
            raise MalformedSegmentationError(f"{where}: bad RLE counts: {exc}") from exc
    raise MalformedSegmentationError(
        f"{where}: segmentation must be a polygon list or an RLE object"
    )


def _annotation_from_dict(entry: dict, images: dict[int, ImageInfo],
                          categories: dict[int, CategoryDef]) -> InstanceAnnotation:
    ann_id = int(_require(entry, "id", "annotation"))
    where = f"annotation {ann_id}"
    image_id = int(_require(entry, "image_id", where))
    category_id = int(_require(entry, "category_id", where))
    if image_id not in images:
        raise DanglingReferenceError(f"{where} references unknown image_id {image_id}")
    if category_id not in categories:
        raise DanglingReferenceError(
            f"{where} references unknown category_id {category_id}"
        )
    image = images[image_id]
    seg = _require(entry, "segmentation", where)
    mask = _segmentation_to_mask(seg, image.height, image.width, where)
    tight = mask.tight_bbox_xywh()
    bbox = BoundingBox(*[float(v) for v in tight]) if tight else BoundingBox(0, 0, 0, 0)
    return InstanceAnnotation(
        id=ann_id,
        image_id=image_id,
        category_id=category_id,
        bbox=bbox,
        mask=mask,
        area=mask.area,
        iscrowd=bool(entry.get("iscrowd", 0)),
    )


def parse_coco_json(text: str) -> DatasetManifest:
    """Parse a COCO-format annotation document into a validated manifest."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"annotation document is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise DataError("annotation document must be a JSON object")
    images = []
    for entry in _require(doc, "images", "document"):
        images.append(ImageInfo(
            id=int(_require(entry, "id", "image")),
            file_name=str(_require(entry, "file_name", "image")),
            height=int(_require(entry, "height", "image")),
            width=int(_require(entry, "width", "image")),
        ))
    categories = []
    for entry in _require(doc, "categories", "document"):
        categories.append(CategoryDef(
            id=int(_require(entry, "id", "category")),
            name=str(_require(entry, "name", "category")),
            is_rare=bool(entry.get("is_rare", False)),
        ))
    image_map = {im.id: im for im in images}
    category_map = {c.id: c for c in categories}
    annotations = [
        _annotation_from_dict(entry, image_map, category_map)
        for entry in _require(doc, "annotations", "document")
    ]
    manifest = DatasetManifest(images=images, annotations=annotations,
                               categories=categories)
    manifest.validate()
    return manifest


def manifest_to_json(manifest: DatasetManifest) -> str:
    """Serialize a manifest back to COCO-format JSON (masks as integer RLE)."""
    doc = {
        "images": [
            {"id": im.id, "file_name": im.file_name,
             "height": im.height, "width": im.width}
            for im in manifest.images
        ],
        "annotations": [
            {
                "id": a.id,
                "image_id": a.image_id,
                "category_id": a.category_id,
                "bbox": [a.bbox.x, a.bbox.y, a.bbox.w, a.bbox.h],
                "area": a.area,
                "iscrowd": int(a.iscrowd),
                "segmentation": {
                    "size": [a.mask.height, a.mask.width],
                    "counts": list(a.mask.counts),
                },
            }
            for a in manifest.annotations
        ],
        "categories": [
            {"id": c.id, "name": c.name, "is_rare": c.is_rare}
            for c in manifest.categories
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=True)


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    Path(path).write_text(manifest_to_json(manifest))


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    if not path.exists():
        raise DataError(f"annotation file not found: {path}")
    return parse_coco_json(path.read_text())


@dataclass(frozen=True)
class DetectionResult:
    """Predicted instance, serializable in the COCO results layout."""

    image_id: int
    category_id: int
    bbox: BoundingBox
    score: float
    mask: RleMask


def detections_to_json(detections: list[DetectionResult]) -> str:
    entries = [
        {
            "image_id": d.image_id,
            "category_id": d.category_id,
            "bbox": [d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h],
            "score": d.score,
            "segmentation": {
                "size": [d.mask.height, d.mask.width],
                "counts": list(d.mask.counts),
            },
        }
        for d in detections
    ]
    return json.dumps(entries, indent=2)


def parse_results_json(text: str) -> list[DetectionResult]:
    """Parse a COCO-results array; malformed entries are named by index."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"results document is not valid JSON: {exc}") from exc
    if not isinstance(doc, list):
        raise DataError("results document must be a JSON array")
    out = []
    for idx, entry in enumerate(doc):
        where = f"detection entry {idx}"
        try:
            seg = _require(entry, "segmentation", where)
            size = _require(seg, "size", where)
            mask = _segmentation_to_mask(seg, int(size[0]), int(size[1]), where)
            bbox_vals = _require(entry, "bbox", where)
            if len(bbox_vals) != 4:
                raise DataError(f"{where}: bbox must have 4 values")
            score = float(_require(entry, "score", where))
            if not np.isfinite(score):
                raise DataError(f"{where}: score must be finite")
            out.append(DetectionResult(
                image_id=int(_require(entry, "image_id", where)),
                category_id=int(_require(entry, "category_id", where)),
                bbox=BoundingBox(*[float(v) for v in bbox_vals]),
                score=score,
                mask=mask,
            ))
        except (TypeError, ValueError) as exc:
            raise DataError(f"{where}: {exc}") from exc
    return out

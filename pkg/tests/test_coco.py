"""COCO-format parsing, rasterization, serialization round trips."""

import json

import numpy as np
import pytest

from plainseg.data.coco import (
    manifest_to_json,
    parse_coco_json,
    parse_results_json,
    polygons_to_mask,
)
from plainseg.data.toygen import ToyDatasetConfig, generate_toy_dataset
from plainseg.errors import (
    DanglingReferenceError,
    DataError,
    MalformedSegmentationError,
    MissingFieldError,
)

MINIMAL = {
    "images": [{"id": 1, "file_name": "a.png", "height": 20, "width": 20}],
    "annotations": [],
    "categories": [{"id": 1, "name": "thing"}],
}


def doc_with(**kwargs):
    doc = json.loads(json.dumps(MINIMAL))
    doc.update(kwargs)
    return doc


def test_minimal_document():
    manifest = parse_coco_json(json.dumps(MINIMAL))
    assert len(manifest.images) == 1
    assert manifest.annotations == []
    assert manifest.categories[0].name == "thing"
    assert manifest.categories[0].is_rare is False


def test_dangling_image_reference():
    doc = doc_with(annotations=[{
        "id": 1, "image_id": 99, "category_id": 1,
        "segmentation": [[0, 0, 10, 0, 10, 10, 0, 10]],
    }])
    with pytest.raises(DanglingReferenceError):
        parse_coco_json(json.dumps(doc))


def test_dangling_category_reference():
    doc = doc_with(annotations=[{
        "id": 1, "image_id": 1, "category_id": 7,
        "segmentation": [[0, 0, 10, 0, 10, 10, 0, 10]],
    }])
    with pytest.raises(DanglingReferenceError):
        parse_coco_json(json.dumps(doc))


def test_missing_field():
    doc = doc_with(images=[{"id": 1, "file_name": "a.png", "height": 20}])
    with pytest.raises(MissingFieldError):
        parse_coco_json(json.dumps(doc))


def test_malformed_segmentation():
    doc = doc_with(annotations=[{
        "id": 1, "image_id": 1, "category_id": 1, "segmentation": 42,
    }])
    with pytest.raises(MalformedSegmentationError):
        parse_coco_json(json.dumps(doc))
    doc = doc_with(annotations=[{
        "id": 1, "image_id": 1, "category_id": 1,
        "segmentation": {"size": [20, 20], "counts": "PQR"},
    }])
    with pytest.raises(MalformedSegmentationError):
        parse_coco_json(json.dumps(doc))
    doc = doc_with(annotations=[{
        "id": 1, "image_id": 1, "category_id": 1,
        "segmentation": {"size": [5, 5], "counts": [25]},
    }])
    with pytest.raises(MalformedSegmentationError):
        parse_coco_json(json.dumps(doc))


def test_square_polygon_rasterizes_to_area_100():
    doc = doc_with(annotations=[{
        "id": 1, "image_id": 1, "category_id": 1,
        "segmentation": [[0, 0, 10, 0, 10, 10, 0, 10]],
    }])
    manifest = parse_coco_json(json.dumps(doc))
    ann = manifest.annotations[0]
    assert ann.area == 100
    assert (ann.bbox.x, ann.bbox.y, ann.bbox.w, ann.bbox.h) == (0, 0, 10, 10)


def test_polygon_even_odd_hole():
    outer = [0, 0, 12, 0, 12, 12, 0, 12]
    inner = [4, 4, 8, 4, 8, 8, 4, 8]
    mask = polygons_to_mask([outer, inner], 20, 20)
    assert int(mask.sum()) == 144 - 16
    assert mask[6, 6] == 0 and mask[2, 2] == 1


def test_rle_segmentation_parse():
    doc = doc_with(annotations=[{
        "id": 1, "image_id": 1, "category_id": 1,
        "segmentation": {"size": [20, 20], "counts": [0, 400]},
    }])
    ann = parse_coco_json(json.dumps(doc)).annotations[0]
    assert ann.area == 400
    assert ann.mask.counts == (0, 400)


def test_area_and_bbox_recomputed_from_mask():
    doc = doc_with(annotations=[{
        "id": 1, "image_id": 1, "category_id": 1,
        "segmentation": [[2, 3, 7, 3, 7, 9, 2, 9]],
        "bbox": [0, 0, 1, 1], "area": 5,
    }])
    ann = parse_coco_json(json.dumps(doc)).annotations[0]
    dense = ann.mask.to_dense()
    assert ann.area == int(dense.sum())
    ys, xs = np.nonzero(dense)
    assert ann.bbox.x == xs.min() and ann.bbox.y == ys.min()


def test_serialize_parse_identity():
    manifest, _ = generate_toy_dataset(ToyDatasetConfig(num_images=4, seed=3))
    text = manifest_to_json(manifest)
    back = parse_coco_json(text)
    assert back.images == manifest.images
    assert back.categories == manifest.categories
    assert back.annotations == manifest.annotations
    # a second serialization is byte-identical
    assert manifest_to_json(back) == text


def test_results_roundtrip_and_errors():
    manifest, _ = generate_toy_dataset(ToyDatasetConfig(num_images=2, seed=5))
    from plainseg.data.coco import DetectionResult, detections_to_json

    dets = [
        DetectionResult(image_id=a.image_id, category_id=a.category_id,
                        bbox=a.bbox, score=0.75, mask=a.mask)
        for a in manifest.annotations
    ]
    text = detections_to_json(dets)
    back = parse_results_json(text)
    assert back == dets

    with pytest.raises(DataError, match="entry 0"):
        parse_results_json(json.dumps([{"image_id": 1}]))
    with pytest.raises(DataError):
        parse_results_json("{}")

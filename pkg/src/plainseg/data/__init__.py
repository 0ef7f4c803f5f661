"""Dataset containers: masks, boxes, COCO-format IO, toy data generator."""

from .coco import (
    CategoryDef,
    DatasetManifest,
    DetectionResult,
    ImageInfo,
    InstanceAnnotation,
    detections_to_json,
    load_manifest,
    manifest_to_json,
    parse_coco_json,
    parse_results_json,
    polygons_to_mask,
    save_manifest,
)
from .geometry import BoundingBox, box_iou
from .rle import RleMask, mask_iou
from .toygen import (
    TOY_CATEGORIES,
    DatasetStats,
    ToyDatasetConfig,
    dataset_stats,
    generate_toy_dataset,
    load_images,
)

__all__ = [
    "BoundingBox",
    "CategoryDef",
    "DatasetManifest",
    "DatasetStats",
    "DetectionResult",
    "ImageInfo",
    "InstanceAnnotation",
    "RleMask",
    "TOY_CATEGORIES",
    "ToyDatasetConfig",
    "box_iou",
    "dataset_stats",
    "detections_to_json",
    "generate_toy_dataset",
    "load_images",
    "load_manifest",
    "manifest_to_json",
    "mask_iou",
    "parse_coco_json",
    "parse_results_json",
    "polygons_to_mask",
    "save_manifest",
]

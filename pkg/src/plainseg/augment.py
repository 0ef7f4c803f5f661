"""Large-scale jittering: uniform rescale then pad/crop to a fixed square.

The image is resized by a single factor on both axes (aspect preserved up to
one pixel of rounding, bilinear for pixels, nearest for masks), then placed on
a ``crop_size`` x ``crop_size`` canvas: padded at the top-left when smaller,
cropped at a random offset when larger. Boxes and masks follow the identical
geometric map; instances that end up without any visible pixel are dropped,
partially visible ones get their area and tight box recomputed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image, ImageDraw

from .data.coco import DatasetManifest, InstanceAnnotation
from .data.geometry import BoundingBox
from .data.rle import RleMask
from .errors import ConfigError, DataError


@dataclass(frozen=True)
class AugmentConfig:
    scale_min: float = 0.1
    scale_max: float = 2.0
    crop_size: int = 256
    pad_value: int = 0
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0 < self.scale_min <= self.scale_max:
            raise ConfigError("need 0 < scale_min <= scale_max")
        if self.crop_size <= 0:
            raise ConfigError("crop_size must be positive")
        if not 0 <= self.pad_value <= 255:
            raise ConfigError("pad_value must be a byte intensity")


@dataclass
class AugmentedSample:
    image: np.ndarray
    annotations: list[InstanceAnnotation]
    applied_scale: float
    applied_offsets: tuple[int, int]


def sample_scale(cfg: AugmentConfig, rng: np.random.Generator) -> float:
    """Draw a rescale factor uniformly from [scale_min, scale_max]."""
    return float(rng.uniform(cfg.scale_min, cfg.scale_max))


def _resize_mask_nearest(mask: np.ndarray, new_h: int, new_w: int) -> np.ndarray:
    h, w = mask.shape
    rows = np.minimum((np.arange(new_h) + 0.5) * h / new_h, h - 1).astype(np.int64)
    cols = np.minimum((np.arange(new_w) + 0.5) * w / new_w, w - 1).astype(np.int64)
    return mask[rows[:, None], cols[None, :]]


def _resize_image_bilinear(image: np.ndarray, new_h: int, new_w: int) -> np.ndarray:
    return np.asarray(
        Image.fromarray(image).resize((new_w, new_h), Image.BILINEAR)
    )


def lsj_transform(
    image: np.ndarray,
    annotations: Sequence[InstanceAnnotation],
    scale: float,
    cfg: AugmentConfig,
    rng: np.random.Generator,
) -> AugmentedSample:
    """Apply the jitter at a given scale to one image and its annotations."""
    if image.ndim not in (2, 3) or image.size == 0:
        raise DataError("image must be a non-empty HxW or HxWxC array")
    if not cfg.scale_min <= scale <= cfg.scale_max:
        raise ConfigError(
            f"scale {scale} outside configured range "
            f"[{cfg.scale_min}, {cfg.scale_max}]"
        )
    h, w = image.shape[:2]
    new_h = max(1, round(h * scale))
    new_w = max(1, round(w * scale))
    crop = cfg.crop_size

    if (new_h, new_w) == (h, w):
        resized = image
    else:
        resized = _resize_image_bilinear(image, new_h, new_w)

    # offsets are drawn unconditionally so rng consumption is branch-free
    off_y = int(rng.integers(0, max(new_h - crop, 0) + 1))
    off_x = int(rng.integers(0, max(new_w - crop, 0) + 1))

    place_h = min(new_h, crop)
    place_w = min(new_w, crop)

    if image.ndim == 3:
        canvas = np.full((crop, crop, image.shape[2]), cfg.pad_value, dtype=image.dtype)
    else:
        canvas = np.full((crop, crop), cfg.pad_value, dtype=image.dtype)
    canvas[:place_h, :place_w] = resized[off_y:off_y + place_h, off_x:off_x + place_w]

    out_annotations: list[InstanceAnnotation] = []
    for ann in annotations:
        if (ann.mask.height, ann.mask.width) != (h, w):
            raise DataError(
                f"annotation {ann.id} mask size {(ann.mask.height, ann.mask.width)} "
                f"does not match image size {(h, w)}"
            )
        dense = ann.mask.to_dense()
        if (new_h, new_w) != (h, w):
            dense = _resize_mask_nearest(dense, new_h, new_w)
        mask_canvas = np.zeros((crop, crop), dtype=np.uint8)
        mask_canvas[:place_h, :place_w] = dense[off_y:off_y + place_h,
                                                off_x:off_x + place_w]
        area = int(mask_canvas.sum())
        if area < 1:
            continue
        rle = RleMask.from_dense(mask_canvas)
        x, y, bw, bh = rle.tight_bbox_xywh()
        out_annotations.append(InstanceAnnotation(
            id=ann.id,
            image_id=ann.image_id,
            category_id=ann.category_id,
            bbox=BoundingBox(float(x), float(y), float(bw), float(bh)),
            mask=rle,
            area=area,
            iscrowd=ann.iscrowd,
        ))
    return AugmentedSample(
        image=canvas,
        annotations=out_annotations,
        applied_scale=scale,
        applied_offsets=(off_x, off_y),
    )


_OVERLAY_COLORS = [
    (235, 80, 80), (80, 200, 120), (90, 140, 235), (230, 200, 70), (200, 110, 220),
]


def render_overlay(image: np.ndarray,
                   annotations: Sequence[InstanceAnnotation]) -> np.ndarray:
    """Tint instance masks and outline boxes, color keyed by category."""
    canvas = image.astype(np.float32).copy()
    if canvas.ndim == 2:
        canvas = np.stack([canvas] * 3, axis=-1)
    for ann in annotations:
        color = np.asarray(_OVERLAY_COLORS[(ann.category_id - 1) % len(_OVERLAY_COLORS)],
                           dtype=np.float32)
        m = ann.mask.to_dense().astype(bool)
        canvas[m] = 0.5 * canvas[m] + 0.5 * color
    out = Image.fromarray(np.clip(canvas, 0, 255).astype(np.uint8))
    draw = ImageDraw.Draw(out)
    for ann in annotations:
        color = _OVERLAY_COLORS[(ann.category_id - 1) % len(_OVERLAY_COLORS)]
        x0, y0, x1, y1 = ann.bbox.to_xyxy()
        draw.rectangle([x0, y0, max(x1 - 1, x0), max(y1 - 1, y0)], outline=color)
    return np.asarray(out)


def augment_preview(
    manifest: DatasetManifest,
    images: dict[int, np.ndarray],
    cfg: AugmentConfig,
    n: int,
    out_dir: str | Path,
) -> list[dict]:
    """Write n augmented overlay images plus a sidecar JSON of the draws."""
    if n < 1:
        raise ConfigError("preview count must be >= 1")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    records = []
    chosen = sorted(images)[:n]
    for image_id in chosen:
        anns = manifest.annotations_for_image(image_id)
        scale = sample_scale(cfg, rng)
        sample = lsj_transform(images[image_id], anns, scale, cfg, rng)
        overlay = render_overlay(sample.image, sample.annotations)
        Image.fromarray(overlay).save(out_dir / f"preview_{image_id:05d}.png")
        records.append({
            "image_id": image_id,
            "scale": sample.applied_scale,
            "offsets": list(sample.applied_offsets),
            "surviving_ids": [a.id for a in sample.annotations],
        })
    (out_dir / "preview.json").write_text(json.dumps(records, indent=2))
    return records

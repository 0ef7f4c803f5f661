"""Synthetic long-tailed shape dataset.

Renders disjoint geometric shapes (disk, square, triangle, cross, ring) on
noisy backgrounds; the last two categories are the rare ones. Rare instances
are allocated with a running quota so the realized rare fraction tracks
``rare_fraction_target`` to within one instance of rounding, independent of
seed. Masks are exact (analytic predicates on pixel centers), boxes are tight,
and generation is deterministic per seed with an independent RNG stream per
image.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import ConfigError, DataError
from .coco import CategoryDef, DatasetManifest, ImageInfo, InstanceAnnotation
from .geometry import BoundingBox
from .rle import RleMask

TOY_CATEGORIES = (
    CategoryDef(id=1, name="disk"),
    CategoryDef(id=2, name="square"),
    CategoryDef(id=3, name="triangle"),
    CategoryDef(id=4, name="cross", is_rare=True),
    CategoryDef(id=5, name="ring", is_rare=True),
)

_DEFAULT_WEIGHTS = (0.28, 0.27, 0.27, 0.09, 0.09)


@dataclass(frozen=True)
class ToyDatasetConfig:
    num_images: int = 20
    image_size: int = 96
    category_weights: tuple[float, ...] = _DEFAULT_WEIGHTS
    rare_fraction_target: float = 0.18
    shapes_per_image: tuple[int, int] = (2, 4)
    size_range: tuple[int, int] = (18, 40)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.num_images <= 0:
            raise ConfigError("num_images must be positive")
        if not 0.0 < self.rare_fraction_target < 1.0:
            raise ConfigError("rare_fraction_target must lie in (0, 1)")
        if len(self.category_weights) != len(TOY_CATEGORIES):
            raise ConfigError(
                f"expected {len(TOY_CATEGORIES)} category weights, "
                f"got {len(self.category_weights)}"
            )
        if any(w < 0 for w in self.category_weights):
            raise ConfigError("category weights must be non-negative")
        if abs(sum(self.category_weights) - 1.0) > 1e-9:
            raise ConfigError("category weights must sum to 1")
        lo, hi = self.shapes_per_image
        if not 1 <= lo <= hi:
            raise ConfigError("shapes_per_image must be an increasing range from >= 1")
        slo, shi = self.size_range
        if not 8 <= slo <= shi:
            raise ConfigError("shape sizes must be >= 8 pixels and ordered")
        if self.image_size < shi + 8:
            raise ConfigError(
                f"image_size {self.image_size} too small for shapes up to "
                f"{shi} pixels (needs >= {shi + 8})"
            )


def _shape_mask(name: str, size: int, cx: float, cy: float,
                grid: tuple[np.ndarray, np.ndarray], rng: np.random.Generator) -> np.ndarray:
    xs, ys = grid
    dx = xs - cx
    dy = ys - cy
    half = size / 2.0
    if name == "disk":
        return dx * dx + dy * dy <= half * half
    if name == "square":
        return (np.abs(dx) <= half) & (np.abs(dy) <= half)
    if name == "triangle":
        # upright isoceles: apex at (cx, cy - half), base corners (cx +- half, cy + half)
        inside = dy <= half
        inside &= dy >= 2.0 * dx - half
        inside &= dy >= -2.0 * dx - half
        return inside
    if name == "cross":
        bar = max(size / 5.0, 3.0)
        return ((np.abs(dx) <= half) & (np.abs(dy) <= bar)) | \
               ((np.abs(dy) <= half) & (np.abs(dx) <= bar))
    if name == "ring":
        rho = rng.uniform(0.45, 0.55)
        d2 = dx * dx + dy * dy
        return (d2 <= half * half) & (d2 >= (rho * half) ** 2)
    raise ValueError(f"unknown shape {name}")


def _dilate(mask: np.ndarray, k: int = 2) -> np.ndarray:
    out = mask.copy()
    for _ in range(k):
        grown = out.copy()
        grown[1:, :] |= out[:-1, :]
        grown[:-1, :] |= out[1:, :]
        grown[:, 1:] |= out[:, :-1]
        grown[:, :-1] |= out[:, 1:]
        out = grown
    return out


def _rare_quota(cumulative_before: int, count: int, target: float) -> int:
    after = cumulative_before + count
    return math.floor(after * target) - math.floor(cumulative_before * target)


def _split_weights(cfg: ToyDatasetConfig) -> tuple[np.ndarray, np.ndarray]:
    w = np.asarray(cfg.category_weights, dtype=np.float64)
    rare = np.asarray([c.is_rare for c in TOY_CATEGORIES])
    common_w, rare_w = w[~rare], w[rare]
    if common_w.sum() <= 0 or rare_w.sum() <= 0:
        raise ConfigError("both common and rare categories need positive weight")
    return common_w / common_w.sum(), rare_w / rare_w.sum()


@dataclass
class _PlacedShape:
    category: CategoryDef
    mask: np.ndarray


def _generate_image(index: int, shape_count: int, rare_count: int,
                    cfg: ToyDatasetConfig,
                    rng: np.random.Generator) -> tuple[np.ndarray, list[_PlacedShape]]:
    size = cfg.image_size
    xs = np.arange(size, dtype=np.float64)[None, :] + 0.5
    ys = np.arange(size, dtype=np.float64)[:, None] + 0.5
    grid = (np.broadcast_to(xs, (size, size)), np.broadcast_to(ys, (size, size)))

    common_w, rare_w = _split_weights(cfg)
    commons = [c for c in TOY_CATEGORIES if not c.is_rare]
    rares = [c for c in TOY_CATEGORIES if c.is_rare]

    is_rare_slot = np.zeros(shape_count, dtype=bool)
    if rare_count:
        is_rare_slot[rng.choice(shape_count, size=rare_count, replace=False)] = True

    base = np.array([48, 52, 60], dtype=np.int16)
    image = np.clip(
        base[None, None, :] + rng.integers(-6, 7, size=(size, size, 3)),
        0, 255,
    ).astype(np.uint8)

    occupied = np.zeros((size, size), dtype=bool)
    placed: list[_PlacedShape] = []
    for slot in range(shape_count):
        if is_rare_slot[slot]:
            category = rares[int(rng.choice(len(rares), p=rare_w))]
        else:
            category = commons[int(rng.choice(len(commons), p=common_w))]
        for _ in range(60):
            s = int(rng.integers(cfg.size_range[0], cfg.size_range[1] + 1))
            margin = s / 2.0 + 2.0
            cx = rng.uniform(margin, size - margin)
            cy = rng.uniform(margin, size - margin)
            mask = _shape_mask(category.name, s, cx, cy, grid, rng)
            if mask.sum() < 25:
                continue
            if (occupied & _dilate(mask)).any():
                continue
            occupied |= mask
            color = rng.integers(110, 256, size=3)
            image[mask] = color
            placed.append(_PlacedShape(category=category, mask=mask))
            break
    return image, placed


def generate_toy_dataset(
    cfg: ToyDatasetConfig,
    out_dir: str | Path | None = None,
) -> tuple[DatasetManifest, dict[int, np.ndarray]]:
    """Generate the dataset; optionally persist PNGs + annotation JSON.

    Returns the manifest and a map image_id -> HxWx3 uint8 array. When
    ``out_dir`` is given, images land in ``out_dir/images`` and the manifest
    in ``out_dir/annotations.json``.
    """
    # shape counts first, so rare quotas depend only on per-image streams
    counts = [
        int(np.random.default_rng([cfg.seed, i, 0]).integers(
            cfg.shapes_per_image[0], cfg.shapes_per_image[1] + 1))
        for i in range(cfg.num_images)
    ]
    quotas = []
    cumulative = 0
    for n in counts:
        quotas.append(_rare_quota(cumulative, n, cfg.rare_fraction_target))
        cumulative += n

    manifest = DatasetManifest(categories=list(TOY_CATEGORIES))
    arrays: dict[int, np.ndarray] = {}
    ann_id = 1
    for i in range(cfg.num_images):
        rng = np.random.default_rng([cfg.seed, i, 1])
        image_id = i + 1
        image, placed = _generate_image(i, counts[i], quotas[i], cfg, rng)
        info = ImageInfo(
            id=image_id,
            file_name=f"images/img_{image_id:05d}.png",
            height=cfg.image_size,
            width=cfg.image_size,
        )
        manifest.images.append(info)
        arrays[image_id] = image
        for shape in placed:
            rle = RleMask.from_dense(shape.mask)
            x, y, w, h = rle.tight_bbox_xywh()
            manifest.annotations.append(InstanceAnnotation(
                id=ann_id,
                image_id=image_id,
                category_id=shape.category.id,
                bbox=BoundingBox(float(x), float(y), float(w), float(h)),
                mask=rle,
                area=rle.area,
                iscrowd=False,
            ))
            ann_id += 1

    if out_dir is not None:
        from .coco import save_manifest

        out_dir = Path(out_dir)
        (out_dir / "images").mkdir(parents=True, exist_ok=True)
        for info in manifest.images:
            Image.fromarray(arrays[info.id]).save(out_dir / info.file_name)
        save_manifest(manifest, out_dir / "annotations.json")
    return manifest, arrays


def load_images(manifest: DatasetManifest, root: str | Path) -> dict[int, np.ndarray]:
    """Load the PNGs referenced by a manifest, keyed by image id."""
    root = Path(root)
    arrays = {}
    for info in manifest.images:
        path = root / info.file_name
        if not path.exists():
            raise DataError(f"image file not found: {path}")
        arr = np.asarray(Image.open(path).convert("RGB"))
        if arr.shape[:2] != (info.height, info.width):
            raise DataError(
                f"image {info.id}: file is {arr.shape[:2]}, manifest says "
                f"{(info.height, info.width)}"
            )
        arrays[info.id] = arr
    return arrays


@dataclass(frozen=True)
class DatasetStats:
    per_category: dict[int, int]
    total_instances: int
    rare_instances: int
    rare_fraction: float | None = field(default=None)


def dataset_stats(manifest: DatasetManifest) -> DatasetStats:
    """Per-category instance counts and the rare-class instance fraction."""
    per_category = {c.id: 0 for c in manifest.categories}
    rare_ids = {c.id for c in manifest.categories if c.is_rare}
    rare = 0
    for ann in manifest.annotations:
        per_category[ann.category_id] += 1
        if ann.category_id in rare_ids:
            rare += 1
    total = len(manifest.annotations)
    return DatasetStats(
        per_category=per_category,
        total_instances=total,
        rare_instances=rare,
        rare_fraction=(rare / total) if total else None,
    )

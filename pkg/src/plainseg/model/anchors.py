"""Anchor grids: one size per pyramid level, three aspect ratios per cell."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError


@dataclass(frozen=True)
class AnchorConfig:
    aspect_ratios: tuple[float, ...] = (0.5, 1.0, 2.0)
    anchor_scale: float = 4.0

    def __post_init__(self) -> None:
        if not self.aspect_ratios or any(r <= 0 for r in self.aspect_ratios):
            raise ConfigError("aspect ratios must be positive")
        if self.anchor_scale <= 0:
            raise ConfigError("anchor_scale must be positive")


def generate_anchors(
    level_shapes: list[tuple[int, int]],
    strides: list[int],
    cfg: AnchorConfig,
) -> list[np.ndarray]:
    """Per-level (H * W * R, 4) xyxy anchors centered on feature cells.

    Cell (r, c) of a level with stride s is centered at ((c + 0.5) s,
    (r + 0.5) s); the level's anchor area is (anchor_scale * s)^2 and each
    aspect ratio rho gives a box with h / w = rho.
    """
    if len(level_shapes) != len(strides):
        raise ConfigError("one stride per pyramid level required")
    out = []
    ratios = np.asarray(cfg.aspect_ratios, dtype=np.float64)
    for (h, w), stride in zip(level_shapes, strides):
        size = cfg.anchor_scale * stride
        ws = size / np.sqrt(ratios)
        hs = size * np.sqrt(ratios)
        cx = (np.arange(w, dtype=np.float64) + 0.5) * stride
        cy = (np.arange(h, dtype=np.float64) + 0.5) * stride
        cxg, cyg = np.meshgrid(cx, cy)
        centers = np.stack([cxg.ravel(), cyg.ravel()], axis=1)
        boxes = np.empty((h * w, len(ratios), 4), dtype=np.float64)
        boxes[:, :, 0] = centers[:, None, 0] - ws[None, :] / 2
        boxes[:, :, 1] = centers[:, None, 1] - hs[None, :] / 2
        boxes[:, :, 2] = centers[:, None, 0] + ws[None, :] / 2
        boxes[:, :, 3] = centers[:, None, 1] + hs[None, :] / 2
        out.append(boxes.reshape(-1, 4))
    return out

"""Axis-aligned boxes in (x, y, w, h) pixel coordinates."""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import DataError


@dataclass(frozen=True)
class BoundingBox:
    """Box with top-left corner (x, y) and non-negative extents."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self) -> None:
        if self.w < 0 or self.h < 0:
            raise DataError(f"box extents must be non-negative, got w={self.w} h={self.h}")

    @property
    def area(self) -> float:
        return self.w * self.h

    def to_xyxy(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.x + self.w, self.y + self.h)

    @classmethod
    def from_xyxy(cls, x0: float, y0: float, x1: float, y1: float) -> "BoundingBox":
        return cls(x=x0, y=y0, w=max(x1 - x0, 0.0), h=max(y1 - y0, 0.0))

    def clip(self, width: float, height: float) -> "BoundingBox":
        """Clip to the image rectangle [0, width] x [0, height]."""
        x0 = min(max(self.x, 0.0), width)
        y0 = min(max(self.y, 0.0), height)
        x1 = min(max(self.x + self.w, 0.0), width)
        y1 = min(max(self.y + self.h, 0.0), height)
        return BoundingBox.from_xyxy(x0, y0, x1, y1)


def box_iou(a: BoundingBox, b: BoundingBox) -> float:
    """IoU of two boxes; 0 whenever the union is degenerate."""
    ix = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    iy = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return inter / union

"""Run-length-encoded binary masks and mask overlap.

Masks use the column-major convention with a leading zero-run: ``counts[0]``
is the number of background pixels before the first foreground pixel (possibly
0), and runs alternate background/foreground afterwards. This matches the
uncompressed layout used by common annotation tooling, so encoded masks can be
consumed externally.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import kernels
from ..errors import DataError, MalformedRleError


@dataclass(frozen=True)
class RleMask:
    """Binary instance mask stored as column-major run lengths."""

    height: int
    width: int
    counts: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.height <= 0 or self.width <= 0:
            raise MalformedRleError("mask dimensions must be positive")
        if not self.counts:
            raise MalformedRleError("counts must be non-empty")
        if any(c < 0 for c in self.counts):
            raise MalformedRleError("run lengths must be non-negative")
        if any(c == 0 for c in self.counts[1:]):
            raise MalformedRleError("only the leading run may be zero")
        total = sum(self.counts)
        if total != self.height * self.width:
            raise MalformedRleError(
                f"run lengths sum to {total}, expected {self.height * self.width}"
            )

    @classmethod
    def from_dense(cls, mask: np.ndarray) -> "RleMask":
        """Encode a dense binary grid (H, W)."""
        mask = np.asarray(mask)
        if mask.ndim != 2 or mask.size == 0:
            raise MalformedRleError("mask must be a non-empty 2-d grid")
        counts = kernels.rle_encode(mask)
        return cls(height=mask.shape[0], width=mask.shape[1],
                   counts=tuple(int(c) for c in counts))

    def to_dense(self) -> np.ndarray:
        """Decode back to a dense uint8 grid; exact inverse of ``from_dense``."""
        return kernels.rle_decode(
            np.asarray(self.counts, dtype=np.int64), self.height, self.width
        )

    @property
    def area(self) -> int:
        """Number of foreground pixels."""
        return sum(self.counts[1::2])

    def tight_bbox_xywh(self) -> tuple[int, int, int, int] | None:
        """Tight (x, y, w, h) bounding box of the foreground, None if empty."""
        dense = self.to_dense()
        ys, xs = np.nonzero(dense)
        if ys.size == 0:
            return None
        return (
            int(xs.min()),
            int(ys.min()),
            int(xs.max() - xs.min() + 1),
            int(ys.max() - ys.min() + 1),
        )


def mask_iou(a: RleMask, b: RleMask, b_is_crowd: bool = False) -> float:
    """Intersection-over-union of two masks, computed directly on the runs.

    With ``b_is_crowd`` the denominator is the area of ``a`` alone (crowd
    regions count as matched however much of them is covered).
    """
    if (a.height, a.width) != (b.height, b.width):
        raise DataError(
            f"mask dimensions differ: {(a.height, a.width)} vs {(b.height, b.width)}"
        )
    inter = kernels.rle_intersection(
        np.asarray(a.counts, dtype=np.int64), np.asarray(b.counts, dtype=np.int64)
    )
    if b_is_crowd:
        denom = a.area
    else:
        denom = a.area + b.area - inter
    if denom <= 0:
        return 0.0
    return inter / denom

"""Pure numpy fallback for the run-length / overlap kernels.

Mirrors the signatures of the compiled extension (`_ckernels`) exactly; the
package picks one of the two at import time (see ``plainseg.kernels``).
"""

from __future__ import annotations

import numpy as np

BACKEND = "python"


def rle_encode(mask: np.ndarray) -> np.ndarray:
    """Encode a dense binary mask as column-major run lengths.

    The first run counts zeros (and may be 0 when the mask starts with a
    foreground pixel); runs alternate zeros/ones afterwards.
    """
    if mask.ndim != 2 or mask.size == 0:
        raise ValueError("mask must be a non-empty 2-d array")
    flat = (np.asarray(mask) != 0).ravel(order="F")
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], changes, [flat.size]))
    counts = np.diff(bounds).astype(np.int64)
    if flat[0]:
        counts = np.concatenate(([np.int64(0)], counts))
    return counts


def rle_decode(counts: np.ndarray, height: int, width: int) -> np.ndarray:
    """Expand run lengths back into a dense uint8 mask of shape (height, width)."""
    counts = np.asarray(counts, dtype=np.int64)
    if height <= 0 or width <= 0:
        raise ValueError("mask dimensions must be positive")
    if counts.size and counts.min() < 0:
        raise ValueError("run lengths must be non-negative")
    total = int(counts.sum())
    if total != height * width:
        raise ValueError(
            f"run lengths sum to {total}, expected {height * width}"
        )
    values = np.zeros(counts.size, dtype=np.uint8)
    values[1::2] = 1
    flat = np.repeat(values, counts)
    return flat.reshape((height, width), order="F")


def rle_area(counts: np.ndarray) -> int:
    """Number of foreground pixels (sum of the one-runs)."""
    counts = np.asarray(counts, dtype=np.int64)
    return int(counts[1::2].sum())


def rle_intersection(a_counts: np.ndarray, b_counts: np.ndarray) -> int:
    """Foreground overlap of two run-length masks, computed on the runs."""
    a = np.asarray(a_counts, dtype=np.int64)
    b = np.asarray(b_counts, dtype=np.int64)
    ia = ib = 0
    rem_a = int(a[0]) if a.size else 0
    rem_b = int(b[0]) if b.size else 0
    val_a = val_b = 0
    inter = 0
    while True:
        while ia < a.size and rem_a == 0:
            ia += 1
            if ia < a.size:
                rem_a = int(a[ia])
                val_a = ia & 1
        while ib < b.size and rem_b == 0:
            ib += 1
            if ib < b.size:
                rem_b = int(b[ib])
                val_b = ib & 1
        if ia >= a.size or ib >= b.size:
            break
        step = min(rem_a, rem_b)
        if val_a and val_b:
            inter += step
        rem_a -= step
        rem_b -= step
    return inter


def box_iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU of two sets of xyxy boxes; degenerate unions give 0."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    area_a = np.clip(a[:, 2] - a[:, 0], 0, None) * np.clip(a[:, 3] - a[:, 1], 0, None)
    area_b = np.clip(b[:, 2] - b[:, 0], 0, None) * np.clip(b[:, 3] - b[:, 1], 0, None)
    lt = np.maximum(a[:, None, :2], b[None, :, :2])
    rb = np.minimum(a[:, None, 2:], b[None, :, 2:])
    wh = np.clip(rb - lt, 0, None)
    inter = wh[..., 0] * wh[..., 1]
    union = area_a[:, None] + area_b[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out


def nms(boxes: np.ndarray, scores: np.ndarray, iou_threshold: float) -> np.ndarray:
    """Greedy non-maximum suppression over xyxy boxes.

    Boxes are visited in descending score order (ties broken by lower index);
    a box is suppressed when its IoU with an already kept box exceeds
    ``iou_threshold``. Returns the kept indices in visit order.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    scores = np.asarray(scores, dtype=np.float64).ravel()
    if boxes.shape[0] != scores.shape[0]:
        raise ValueError("boxes and scores must have equal length")
    order = np.argsort(-scores, kind="stable")
    keep: list[int] = []
    suppressed = np.zeros(len(order), dtype=bool)
    for pos, i in enumerate(order):
        if suppressed[pos]:
            continue
        keep.append(int(i))
        rest = order[pos + 1:]
        if rest.size == 0:
            break
        ious = box_iou_matrix(boxes[i: i + 1], boxes[rest])[0]
        suppressed[pos + 1:] |= ious > iou_threshold
    return np.asarray(keep, dtype=np.int64)

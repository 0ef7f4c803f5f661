"""Tensor-side box utilities: delta codec, clipping, target assignment.

Boxes here are (N, 4) xyxy tensors. Regression deltas use the usual
log-space parameterization: center shifts relative to the source box size,
width/height as log ratios (clamped at +4 before exponentiation).
"""

from __future__ import annotations

import numpy as np
import torch

from .. import kernels

LOG_SCALE_CLAMP = 4.0


def encode_deltas(src: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Deltas (dx, dy, dw, dh) that map ``src`` boxes onto ``target`` boxes."""
    sw = src[:, 2] - src[:, 0]
    sh = src[:, 3] - src[:, 1]
    scx = src[:, 0] + 0.5 * sw
    scy = src[:, 1] + 0.5 * sh
    tw = target[:, 2] - target[:, 0]
    th = target[:, 3] - target[:, 1]
    tcx = target[:, 0] + 0.5 * tw
    tcy = target[:, 1] + 0.5 * th
    return torch.stack([
        (tcx - scx) / sw,
        (tcy - scy) / sh,
        torch.log(tw / sw),
        torch.log(th / sh),
    ], dim=1)


def decode_deltas(boxes: torch.Tensor, deltas: torch.Tensor,
                  image_hw: tuple[int, int] | None = None) -> torch.Tensor:
    """Apply regression deltas to boxes, optionally clipping to the image."""
    w = boxes[:, 2] - boxes[:, 0]
    h = boxes[:, 3] - boxes[:, 1]
    cx = boxes[:, 0] + 0.5 * w
    cy = boxes[:, 1] + 0.5 * h
    ncx = cx + deltas[:, 0] * w
    ncy = cy + deltas[:, 1] * h
    nw = w * torch.exp(deltas[:, 2].clamp(max=LOG_SCALE_CLAMP))
    nh = h * torch.exp(deltas[:, 3].clamp(max=LOG_SCALE_CLAMP))
    out = torch.stack([
        ncx - 0.5 * nw, ncy - 0.5 * nh, ncx + 0.5 * nw, ncy + 0.5 * nh,
    ], dim=1)
    if image_hw is not None:
        out = clip_xyxy(out, image_hw)
    return out


def clip_xyxy(boxes: torch.Tensor, image_hw: tuple[int, int]) -> torch.Tensor:
    h, w = image_hw
    x0 = boxes[:, 0].clamp(0, w)
    y0 = boxes[:, 1].clamp(0, h)
    x1 = boxes[:, 2].clamp(0, w)
    y1 = boxes[:, 3].clamp(0, h)
    return torch.stack([x0, y0, x1, y1], dim=1)


def xywh_to_xyxy(boxes: np.ndarray) -> np.ndarray:
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    out = boxes.copy()
    out[:, 2] = boxes[:, 0] + boxes[:, 2]
    out[:, 3] = boxes[:, 1] + boxes[:, 3]
    return out


def assign_targets(
    proposals: np.ndarray,
    gt_boxes: np.ndarray,
    iou_threshold: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Match each proposal to the ground truth of highest IoU.

    Returns (matched_idx, max_iou); matched_idx is -1 for background, i.e.
    when the best IoU falls strictly below the threshold (an IoU exactly at
    the threshold counts as matched). Ties go to the lowest GT index.
    """
    proposals = np.asarray(proposals, dtype=np.float64).reshape(-1, 4)
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    n = proposals.shape[0]
    if gt_boxes.shape[0] == 0:
        return np.full(n, -1, dtype=np.int64), np.zeros(n, dtype=np.float64)
    ious = kernels.box_iou_matrix(proposals, gt_boxes)
    matched = ious.argmax(axis=1)
    max_iou = ious[np.arange(n), matched]
    matched = np.where(max_iou >= iou_threshold, matched, -1)
    return matched.astype(np.int64), max_iou

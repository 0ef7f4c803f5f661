"""Differentiable RoIAlign with continuous coordinates (no rounding).

Each output cell averages ``sampling_ratio^2`` bilinear samples placed on a
regular grid inside the cell. Feature values are treated as living at pixel
centers; samples outside the map clamp to the border. Gradients flow to the
feature map through the bilinear weights, which the finite-difference tests
rely on.
"""

from __future__ import annotations

import torch

from ..errors import DataError

MIN_BOX_EXTENT = 1e-3


def roi_align(
    features: torch.Tensor,
    boxes: torch.Tensor,
    stride: float,
    output_size: int,
    sampling_ratio: int = 2,
) -> torch.Tensor:
    """Pool (C, H, W) features into (N, C, S, S) grids for xyxy image-space boxes."""
    if features.ndim != 3:
        raise DataError(f"expected (C, H, W) features, got {tuple(features.shape)}")
    if boxes.ndim != 2 or boxes.shape[1] != 4:
        raise DataError(f"expected (N, 4) boxes, got {tuple(boxes.shape)}")
    c, h, w = features.shape
    n = boxes.shape[0]
    s = output_size
    r = sampling_ratio
    if n == 0:
        return features.new_zeros((0, c, s, s))

    x1 = boxes[:, 0] / stride
    y1 = boxes[:, 1] / stride
    bw = ((boxes[:, 2] - boxes[:, 0]).clamp(min=MIN_BOX_EXTENT)) / stride
    bh = ((boxes[:, 3] - boxes[:, 1]).clamp(min=MIN_BOX_EXTENT)) / stride

    # sample offsets within a box, as fractions of the box extent
    frac = (torch.arange(s, dtype=features.dtype, device=features.device)[:, None]
            + (torch.arange(r, dtype=features.dtype, device=features.device)[None, :]
               + 0.5) / r) / s
    sx = x1[:, None, None] + bw[:, None, None] * frac[None]  # (N, S, R)
    sy = y1[:, None, None] + bh[:, None, None] * frac[None]

    def bilinear_axis(coord: torch.Tensor, extent: int):
        t = coord - 0.5
        i0 = torch.floor(t)
        fracs = (t - i0).clamp(0, 1)
        lo = i0.long().clamp(0, extent - 1)
        hi = (i0.long() + 1).clamp(0, extent - 1)
        return lo, hi, fracs

    x_lo, x_hi, fx = bilinear_axis(sx, w)
    y_lo, y_hi, fy = bilinear_axis(sy, h)

    # broadcast y sample axes against x sample axes: (N, S, R, S, R)
    def expand_y(t):
        return t[:, :, :, None, None]

    def expand_x(t):
        return t[:, None, None, :, :]

    flat = features.reshape(c, -1)

    def gather(yi, xi):
        idx = (yi * w + xi).reshape(-1)
        return flat[:, idx].reshape(c, n, s, r, s, r)

    wy = expand_y(fy)
    wx = expand_x(fx)
    v00 = gather(expand_y(y_lo), expand_x(x_lo)) * ((1 - wy) * (1 - wx))
    v01 = gather(expand_y(y_lo), expand_x(x_hi)) * ((1 - wy) * wx)
    v10 = gather(expand_y(y_hi), expand_x(x_lo)) * (wy * (1 - wx))
    v11 = gather(expand_y(y_hi), expand_x(x_hi)) * (wy * wx)
    pooled = (v00 + v01 + v10 + v11).mean(dim=(3, 5))
    return pooled.permute(1, 0, 2, 3).contiguous()


def assign_pyramid_levels(
    boxes: torch.Tensor,
    num_levels: int,
    canonical_index: int,
    canonical_size: float,
) -> torch.Tensor:
    """Map boxes to pyramid levels by size: canonical_size-wide boxes pool
    from canonical_index, each doubling in size moves one level up."""
    area = ((boxes[:, 2] - boxes[:, 0]).clamp(min=MIN_BOX_EXTENT)
            * (boxes[:, 3] - boxes[:, 1]).clamp(min=MIN_BOX_EXTENT))
    k = torch.floor(canonical_index + torch.log2(torch.sqrt(area) / canonical_size))
    return k.clamp(0, num_levels - 1).long()

"""Cascade detection heads: three box-refinement stages plus a mask branch.

Stage t consumes stage t-1's boxes and re-assigns targets at its own,
strictly increasing IoU threshold. Box regression is class-agnostic; the mask
head predicts one 28x28 logit map per class for the final boxes. At inference
the three stages' class probabilities are averaged per proposal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .. import kernels
from ..errors import ConfigError
from .boxes import assign_targets, decode_deltas, encode_deltas
from .pyramid import FeaturePyramid
from .roi_align import assign_pyramid_levels, roi_align


@dataclass(frozen=True)
class CascadeConfig:
    num_classes: int = 5
    stage_iou_thresholds: tuple[float, ...] = (0.5, 0.6, 0.7)
    stage_loss_weights: tuple[float, ...] = (1.0, 0.5, 0.25)
    pre_nms_topk: int = 256
    post_nms_topk: int = 64
    rpn_nms_threshold: float = 0.7
    rpn_pos_iou: float = 0.7
    rpn_neg_iou: float = 0.3
    rpn_sample_size: int = 128
    rpn_positive_fraction: float = 0.5
    score_threshold: float = 0.05
    nms_threshold: float = 0.5
    max_detections: int = 100
    rois_per_image: int = 32
    positive_fraction: float = 0.25
    mask_rois_per_image: int = 8
    add_gt_to_proposals: bool = True
    box_head_dim: int = 128
    mask_head_channels: int = 32
    roi_size: int = 7
    mask_roi_size: int = 14
    sampling_ratio: int = 2
    canonical_level_index: int = 2
    canonical_box_size: float = 48.0

    def __post_init__(self) -> None:
        if len(self.stage_iou_thresholds) != 3:
            raise ConfigError("exactly three cascade stages are supported")
        if len(self.stage_loss_weights) != len(self.stage_iou_thresholds):
            raise ConfigError("one loss weight per cascade stage required")
        if any(b <= a for a, b in zip(self.stage_iou_thresholds,
                                      self.stage_iou_thresholds[1:])):
            raise ConfigError("stage IoU thresholds must be strictly increasing")
        if not all(0 < t < 1 for t in self.stage_iou_thresholds):
            raise ConfigError("stage IoU thresholds must lie in (0, 1)")
        if self.num_classes < 1:
            raise ConfigError("need at least one foreground class")
        if self.max_detections < 1:
            raise ConfigError("max_detections must be >= 1")

    @property
    def num_stages(self) -> int:
        return len(self.stage_iou_thresholds)


class BoxHead(nn.Module):
    """Two-FC head with class scores and class-agnostic box deltas."""

    def __init__(self, in_channels: int, roi_size: int, fc_dim: int, num_classes: int):
        super().__init__()
        self.fc1 = nn.Linear(in_channels * roi_size * roi_size, fc_dim)
        self.fc2 = nn.Linear(fc_dim, fc_dim)
        self.cls = nn.Linear(fc_dim, num_classes + 1)
        self.reg = nn.Linear(fc_dim, 4)

    def forward(self, feats: torch.Tensor):
        x = feats.flatten(1)
        x = F.relu(self.fc1(x))
        x = F.relu(self.fc2(x))
        return self.cls(x), self.reg(x)


class MaskHead(nn.Module):
    """Four convs, one 2x transposed-conv upsample, per-class 28x28 logits."""

    def __init__(self, in_channels: int, channels: int, num_classes: int):
        super().__init__()
        self.convs = nn.ModuleList([
            nn.Conv2d(in_channels if i == 0 else channels, channels, 3, padding=1)
            for i in range(4)
        ])
        self.upsample = nn.ConvTranspose2d(channels, channels, 2, stride=2)
        self.predictor = nn.Conv2d(channels, num_classes, 1)

    def forward(self, feats: torch.Tensor) -> torch.Tensor:
        x = feats
        for conv in self.convs:
            x = F.relu(conv(x))
        x = F.relu(self.upsample(x))
        return self.predictor(x)


def classification_loss(logits: torch.Tensor, classes: torch.Tensor) -> torch.Tensor:
    """Cross-entropy over foreground classes + background; 0 when empty."""
    if logits.shape[0] == 0:
        return logits.sum() * 0.0
    return F.cross_entropy(logits, classes)


def box_regression_loss(pred_deltas: torch.Tensor, target_deltas: torch.Tensor,
                        normalizer: int) -> torch.Tensor:
    """Smooth-L1 over positive rois, normalized by the sampled-roi count."""
    if pred_deltas.shape[0] == 0:
        return pred_deltas.sum() * 0.0
    return F.smooth_l1_loss(pred_deltas, target_deltas, reduction="sum") \
        / max(normalizer, 1)


def mask_bce_loss(mask_logits: torch.Tensor, targets: torch.Tensor,
                  classes: torch.Tensor) -> torch.Tensor:
    """Per-pixel BCE on each positive roi's own-class channel; 0 when empty."""
    if mask_logits.shape[0] == 0:
        return mask_logits.sum() * 0.0
    picked = mask_logits[torch.arange(mask_logits.shape[0]), classes]
    return F.binary_cross_entropy_with_logits(picked, targets)


class CascadeHeads(nn.Module):
    def __init__(self, cfg: CascadeConfig, in_channels: int):
        super().__init__()
        self.cfg = cfg
        self.stages = nn.ModuleList([
            BoxHead(in_channels, cfg.roi_size, cfg.box_head_dim, cfg.num_classes)
            for _ in range(cfg.num_stages)
        ])
        self.mask_head = MaskHead(in_channels, cfg.mask_head_channels, cfg.num_classes)

    def pool(self, pyramid: FeaturePyramid, image_index: int,
             boxes: torch.Tensor, output_size: int) -> torch.Tensor:
        cfg = self.cfg
        levels = assign_pyramid_levels(
            boxes, len(pyramid.levels), cfg.canonical_level_index,
            cfg.canonical_box_size,
        )
        feats = None
        for lvl in range(len(pyramid.levels)):
            sel = levels == lvl
            if not bool(sel.any()):
                continue
            pooled = roi_align(
                pyramid.levels[lvl].values[image_index],
                boxes[sel],
                stride=pyramid.levels[lvl].stride,
                output_size=output_size,
                sampling_ratio=cfg.sampling_ratio,
            )
            if feats is None:
                feats = pooled.new_zeros(
                    (boxes.shape[0],) + pooled.shape[1:])
            feats[sel] = pooled
        if feats is None:
            c = pyramid.levels[0].values.shape[1]
            feats = pyramid.levels[0].values.new_zeros(
                (0, c, output_size, output_size))
        return feats

    def _sample(self, matched: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        cfg = self.cfg
        pos = np.flatnonzero(matched >= 0)
        neg = np.flatnonzero(matched < 0)
        num_pos = min(len(pos), int(round(cfg.rois_per_image * cfg.positive_fraction)))
        if len(pos) > num_pos:
            pos = rng.choice(pos, size=num_pos, replace=False)
        num_neg = min(len(neg), cfg.rois_per_image - len(pos))
        if len(neg) > num_neg:
            neg = rng.choice(neg, size=num_neg, replace=False)
        return np.concatenate([np.sort(pos), np.sort(neg)])

    def losses(
        self,
        pyramid: FeaturePyramid,
        image_index: int,
        proposal_boxes: torch.Tensor,
        gt_boxes: torch.Tensor,
        gt_classes: torch.Tensor,
        gt_masks: torch.Tensor,
        image_hw: tuple[int, int],
        rng: np.random.Generator,
        detach_between_stages: bool = True,
    ) -> dict[str, torch.Tensor]:
        """Per-stage classification/box losses plus the mask loss, one image.

        Boxes handed from one stage to the next are detached by default;
        gradient checks disable that to keep the whole chain differentiable.
        """
        cfg = self.cfg
        boxes = proposal_boxes
        if cfg.add_gt_to_proposals and gt_boxes.shape[0]:
            boxes = torch.cat([boxes, gt_boxes.to(boxes.dtype)])
        out: dict[str, torch.Tensor] = {}
        mask_boxes = None
        mask_matched = None
        for t, head in enumerate(self.stages):
            thr = cfg.stage_iou_thresholds[t]
            matched, _ = assign_targets(
                boxes.detach().numpy(), gt_boxes.detach().numpy(), thr)
            sampled = self._sample(matched, rng)
            boxes_s = boxes[torch.from_numpy(sampled)]
            matched_s = matched[sampled]

            feats = self.pool(pyramid, image_index, boxes_s, cfg.roi_size)
            cls_logits, deltas = head(feats)

            if gt_classes.shape[0]:
                labels = np.where(matched_s >= 0,
                                  gt_classes.numpy()[np.maximum(matched_s, 0)],
                                  cfg.num_classes)
            else:
                labels = np.full(len(matched_s), cfg.num_classes, dtype=np.int64)
            out[f"stage{t + 1}_cls"] = classification_loss(
                cls_logits, torch.from_numpy(labels).long())

            pos_mask = matched_s >= 0
            if pos_mask.any():
                pos_t = torch.from_numpy(np.flatnonzero(pos_mask))
                gt_sel = gt_boxes[torch.from_numpy(matched_s[pos_mask])].to(boxes.dtype)
                target_deltas = encode_deltas(boxes_s[pos_t], gt_sel)
                out[f"stage{t + 1}_box"] = box_regression_loss(
                    deltas[pos_t], target_deltas, normalizer=len(sampled))
            else:
                out[f"stage{t + 1}_box"] = deltas.sum() * 0.0

            if t == cfg.num_stages - 1:
                mask_boxes = boxes_s
                mask_matched = matched_s
            elif detach_between_stages:
                with torch.no_grad():
                    boxes = decode_deltas(boxes_s, deltas.detach(), image_hw=image_hw)
            else:
                boxes = decode_deltas(boxes_s, deltas, image_hw=image_hw)

        pos_idx = np.flatnonzero(mask_matched >= 0)
        if len(pos_idx) > cfg.mask_rois_per_image:
            pos_idx = np.sort(rng.choice(pos_idx, size=cfg.mask_rois_per_image,
                                         replace=False))
        if len(pos_idx) == 0 or gt_masks.shape[0] == 0:
            out["mask"] = self.mask_head.predictor.weight.sum() * 0.0
            return out
        sel = torch.from_numpy(pos_idx)
        m_boxes = mask_boxes[sel]
        m_classes = gt_classes[torch.from_numpy(mask_matched[pos_idx])]
        feats = self.pool(pyramid, image_index, m_boxes, cfg.mask_roi_size)
        mask_logits = self.mask_head(feats)
        side = mask_logits.shape[-1]
        targets = []
        for row, g in zip(m_boxes, mask_matched[pos_idx]):
            crop = roi_align(gt_masks[int(g)][None].to(mask_logits.dtype),
                             row[None].detach(), stride=1.0,
                             output_size=side, sampling_ratio=2)
            targets.append((crop[0, 0] >= 0.5).to(mask_logits.dtype))
        out["mask"] = mask_bce_loss(mask_logits, torch.stack(targets),
                                    m_classes.long())
        return out

    @torch.no_grad()
    def inference(
        self,
        pyramid: FeaturePyramid,
        image_index: int,
        proposal_boxes: torch.Tensor,
        image_hw: tuple[int, int],
    ) -> dict[str, np.ndarray]:
        """Cascade refinement, score averaging, per-class NMS, mask probs."""
        cfg = self.cfg
        k = cfg.num_classes
        if proposal_boxes.shape[0] == 0:
            return _empty_detections(k)
        boxes = proposal_boxes
        prob_sum = None
        for head in self.stages:
            feats = self.pool(pyramid, image_index, boxes, cfg.roi_size)
            cls_logits, deltas = head(feats)
            probs = F.softmax(cls_logits, dim=-1)
            prob_sum = probs if prob_sum is None else prob_sum + probs
            boxes = decode_deltas(boxes, deltas, image_hw=image_hw)
        scores = (prob_sum / cfg.num_stages)[:, :k].numpy().astype(np.float64)
        boxes_np = boxes.numpy().astype(np.float64)

        picked_boxes, picked_scores, picked_classes = [], [], []
        for c in range(k):
            sel = np.flatnonzero(scores[:, c] >= cfg.score_threshold)
            if sel.size == 0:
                continue
            keep = kernels.nms(boxes_np[sel], scores[sel, c], cfg.nms_threshold)
            chosen = sel[keep]
            picked_boxes.append(boxes_np[chosen])
            picked_scores.append(scores[chosen, c])
            picked_classes.append(np.full(len(chosen), c, dtype=np.int64))
        if not picked_boxes:
            return _empty_detections(k)
        all_boxes = np.concatenate(picked_boxes)
        all_scores = np.concatenate(picked_scores)
        all_classes = np.concatenate(picked_classes)
        order = np.lexsort((all_classes, -all_scores))[: cfg.max_detections]
        all_boxes, all_scores, all_classes = \
            all_boxes[order], all_scores[order], all_classes[order]

        final = torch.from_numpy(all_boxes).to(proposal_boxes.dtype)
        feats = self.pool(pyramid, image_index, final, cfg.mask_roi_size)
        mask_logits = self.mask_head(feats)
        idx = torch.arange(mask_logits.shape[0])
        mask_probs = torch.sigmoid(
            mask_logits[idx, torch.from_numpy(all_classes)]).numpy()
        return {
            "boxes": all_boxes,
            "scores": all_scores,
            "classes": all_classes,
            "mask_probs": mask_probs.astype(np.float64),
        }


def _empty_detections(num_classes: int) -> dict[str, np.ndarray]:
    side = 28
    return {
        "boxes": np.zeros((0, 4), dtype=np.float64),
        "scores": np.zeros(0, dtype=np.float64),
        "classes": np.zeros(0, dtype=np.int64),
        "mask_probs": np.zeros((0, side, side), dtype=np.float64),
    }


def paste_mask(mask_prob: np.ndarray, box_xyxy: np.ndarray,
               height: int, width: int, threshold: float = 0.5) -> np.ndarray:
    """Resample a roi-space probability map into image space and binarize.

    Pixel centers inside the (clipped) box footprint are mapped into the
    probability map's continuous coordinates and sampled bilinearly, so the
    paste is sub-pixel accurate rather than snapped to integer box corners.
    """
    out = np.zeros((height, width), dtype=np.uint8)
    x1, y1, x2, y2 = [float(v) for v in box_xyxy]
    if x2 - x1 <= 0 or y2 - y1 <= 0:
        return out
    x_lo = max(int(math.floor(x1)), 0)
    y_lo = max(int(math.floor(y1)), 0)
    x_hi = min(int(math.ceil(x2)), width)
    y_hi = min(int(math.ceil(y2)), height)
    if x_hi <= x_lo or y_hi <= y_lo:
        return out
    s_h, s_w = mask_prob.shape
    px = np.arange(x_lo, x_hi, dtype=np.float64) + 0.5
    py = np.arange(y_lo, y_hi, dtype=np.float64) + 0.5
    u = (px - x1) / (x2 - x1) * s_w - 0.5
    v = (py - y1) / (y2 - y1) * s_h - 0.5

    def sample_axis(t, extent):
        i0 = np.floor(t)
        frac = np.clip(t - i0, 0.0, 1.0)
        lo = np.clip(i0.astype(np.int64), 0, extent - 1)
        hi = np.clip(i0.astype(np.int64) + 1, 0, extent - 1)
        return lo, hi, frac

    ux0, ux1, fx = sample_axis(u, s_w)
    vy0, vy1, fy = sample_axis(v, s_h)
    p = (mask_prob[np.ix_(vy0, ux0)] * ((1 - fy)[:, None] * (1 - fx)[None, :])
         + mask_prob[np.ix_(vy0, ux1)] * ((1 - fy)[:, None] * fx[None, :])
         + mask_prob[np.ix_(vy1, ux0)] * (fy[:, None] * (1 - fx)[None, :])
         + mask_prob[np.ix_(vy1, ux1)] * (fy[:, None] * fx[None, :]))
    out[y_lo:y_hi, x_lo:x_hi] = (p >= threshold).astype(np.uint8)
    return out

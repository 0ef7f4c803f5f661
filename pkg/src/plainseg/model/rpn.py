"""Region proposal network over the feature pyramid.

A single 3x3 conv + relu head shared across levels predicts per-anchor
objectness and box deltas. Proposals are decoded, clipped, ranked by score
across all levels, thinned by NMS, and truncated to a per-image budget.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .. import kernels
from ..data.geometry import BoundingBox
from .boxes import clip_xyxy, decode_deltas, encode_deltas
from .pyramid import FeaturePyramid


@dataclass(frozen=True)
class Proposal:
    """A candidate region with its objectness and originating pyramid level."""

    box: BoundingBox
    objectness: float
    source_level: int


@dataclass
class ProposalSet:
    """Per-image proposals as tensors (boxes xyxy, scores, source levels)."""

    boxes: torch.Tensor
    scores: torch.Tensor
    levels: torch.Tensor

    def __len__(self) -> int:
        return self.boxes.shape[0]

    def to_proposals(self) -> list[Proposal]:
        return [
            Proposal(
                box=BoundingBox.from_xyxy(*[float(v) for v in b]),
                objectness=float(s),
                source_level=int(l),
            )
            for b, s, l in zip(self.boxes, self.scores, self.levels)
        ]


class RPNHead(nn.Module):
    def __init__(self, channels: int, num_anchors: int):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, 3, padding=1)
        self.objectness = nn.Conv2d(channels, num_anchors, 1)
        self.deltas = nn.Conv2d(channels, num_anchors * 4, 1)

    def forward(self, pyramid: FeaturePyramid):
        logits, deltas = [], []
        for level in pyramid.levels:
            t = F.relu(self.conv(level.values))
            logits.append(self.objectness(t))
            deltas.append(self.deltas(t))
        return logits, deltas


def _flatten_level(logits: torch.Tensor, deltas: torch.Tensor):
    """(B, A, H, W) / (B, 4A, H, W) -> (B, H*W*A) / (B, H*W*A, 4)."""
    b, a, h, w = logits.shape
    flat_logits = logits.permute(0, 2, 3, 1).reshape(b, -1)
    flat_deltas = deltas.view(b, a, 4, h, w).permute(0, 3, 4, 1, 2).reshape(b, -1, 4)
    return flat_logits, flat_deltas


def propose(
    level_logits: list[torch.Tensor],
    level_deltas: list[torch.Tensor],
    anchors: list[np.ndarray],
    image_hw: tuple[int, int],
    pre_nms_topk: int,
    post_nms_topk: int,
    nms_threshold: float,
    detach: bool = True,
) -> list[ProposalSet]:
    """Decode anchors into scored, NMS-thinned proposal sets per image.

    ``detach`` severs the proposals from the RPN graph (the usual detector
    training setup); gradient-checking code passes False to keep the chain
    differentiable end to end.
    """
    batch = level_logits[0].shape[0]
    out = []
    for b in range(batch):
        boxes_all, scores_all, levels_all = [], [], []
        for lvl, (logits, deltas, anc) in enumerate(
                zip(level_logits, level_deltas, anchors)):
            flat_logits, flat_deltas = _flatten_level(logits[b: b + 1],
                                                      deltas[b: b + 1])
            anc_t = torch.from_numpy(anc).to(flat_deltas.dtype)
            decoded = decode_deltas(anc_t, flat_deltas[0], image_hw=image_hw)
            boxes_all.append(decoded)
            scores_all.append(flat_logits[0])
            levels_all.append(torch.full((decoded.shape[0],), lvl, dtype=torch.long))
        boxes = torch.cat(boxes_all)
        scores = torch.cat(scores_all)
        levels = torch.cat(levels_all)

        valid = ((boxes[:, 2] - boxes[:, 0]) > 1e-3) & ((boxes[:, 3] - boxes[:, 1]) > 1e-3)
        boxes, scores, levels = boxes[valid], scores[valid], levels[valid]

        k = min(pre_nms_topk, scores.shape[0])
        top = torch.topk(scores, k).indices
        boxes, scores, levels = boxes[top], scores[top], levels[top]

        keep = kernels.nms(
            boxes.detach().numpy().astype(np.float64),
            scores.detach().numpy().astype(np.float64),
            nms_threshold,
        )[:post_nms_topk]
        keep_t = torch.from_numpy(keep)
        kept_boxes = boxes[keep_t]
        kept_scores = torch.sigmoid(scores[keep_t])
        if detach:
            kept_boxes = kept_boxes.detach()
            kept_scores = kept_scores.detach()
        out.append(ProposalSet(
            boxes=kept_boxes,
            scores=kept_scores,
            levels=levels[keep_t],
        ))
    return out


def anchor_labels(
    anchors: np.ndarray,
    gt_boxes: np.ndarray,
    pos_iou: float,
    neg_iou: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-anchor labels (1 pos, 0 neg, -1 ignore) and matched GT indices.

    Anchors reaching ``pos_iou`` with any GT are positive; so is any anchor
    achieving a GT's best IoU (so every GT owns at least one anchor). Anchors
    below ``neg_iou`` are negative, the rest are ignored.
    """
    n = anchors.shape[0]
    if gt_boxes.shape[0] == 0:
        return np.zeros(n, dtype=np.int64), np.full(n, -1, dtype=np.int64)
    ious = kernels.box_iou_matrix(anchors, gt_boxes)
    matched = ious.argmax(axis=1)
    max_iou = ious[np.arange(n), matched]
    labels = np.full(n, -1, dtype=np.int64)
    labels[max_iou < neg_iou] = 0
    labels[max_iou >= pos_iou] = 1
    gt_best = ious.max(axis=0)
    for g in range(gt_boxes.shape[0]):
        if gt_best[g] > 0:
            forced = np.flatnonzero(ious[:, g] == gt_best[g])
            labels[forced] = 1
            matched[forced] = g
    return labels, matched.astype(np.int64)


def sample_labels(
    labels: np.ndarray,
    sample_size: int,
    positive_fraction: float,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Subsample positive/negative indices at the requested ratio."""
    pos = np.flatnonzero(labels == 1)
    neg = np.flatnonzero(labels == 0)
    num_pos = min(len(pos), int(round(sample_size * positive_fraction)))
    if len(pos) > num_pos:
        pos = rng.choice(pos, size=num_pos, replace=False)
    num_neg = min(len(neg), sample_size - len(pos))
    if len(neg) > num_neg:
        neg = rng.choice(neg, size=num_neg, replace=False)
    return np.sort(pos), np.sort(neg)


def rpn_losses(
    level_logits: list[torch.Tensor],
    level_deltas: list[torch.Tensor],
    anchors: list[np.ndarray],
    gt_boxes_per_image: list[torch.Tensor],
    pos_iou: float,
    neg_iou: float,
    sample_size: int,
    positive_fraction: float,
    rng: np.random.Generator,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Objectness BCE + smooth-L1 box loss over sampled anchors."""
    anchors_cat = np.concatenate(anchors, axis=0)
    batch = level_logits[0].shape[0]
    cls_losses, box_losses = [], []
    for b in range(batch):
        flat_logits, flat_deltas = [], []
        for logits, deltas in zip(level_logits, level_deltas):
            fl, fd = _flatten_level(logits[b: b + 1], deltas[b: b + 1])
            flat_logits.append(fl[0])
            flat_deltas.append(fd[0])
        logits_cat = torch.cat(flat_logits)
        deltas_cat = torch.cat(flat_deltas)

        gt = gt_boxes_per_image[b].detach().numpy().astype(np.float64)
        labels, matched = anchor_labels(anchors_cat, gt, pos_iou, neg_iou)
        pos, neg = sample_labels(labels, sample_size, positive_fraction, rng)
        sampled = np.concatenate([pos, neg])
        if sampled.size == 0:
            cls_losses.append(logits_cat.sum() * 0.0)
            box_losses.append(deltas_cat.sum() * 0.0)
            continue
        sampled_t = torch.from_numpy(sampled)
        target = torch.zeros(len(sampled), dtype=logits_cat.dtype)
        target[: len(pos)] = 1.0
        cls_losses.append(F.binary_cross_entropy_with_logits(
            logits_cat[sampled_t], target))
        if len(pos) == 0:
            box_losses.append(deltas_cat.sum() * 0.0)
            continue
        pos_t = torch.from_numpy(pos)
        anchor_pos = torch.from_numpy(anchors_cat[pos]).to(deltas_cat.dtype)
        gt_pos = gt_boxes_per_image[b][torch.from_numpy(matched[pos])].to(deltas_cat.dtype)
        target_deltas = encode_deltas(anchor_pos, gt_pos)
        box_losses.append(
            F.smooth_l1_loss(deltas_cat[pos_t], target_deltas, reduction="sum")
            / len(sampled)
        )
    return torch.stack(cls_losses).mean(), torch.stack(box_losses).mean()

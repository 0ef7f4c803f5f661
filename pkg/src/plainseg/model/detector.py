"""End-to-end detector: backbone -> pyramid -> proposals -> cascade heads."""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from ..data.coco import DatasetManifest, DetectionResult
from ..data.geometry import BoundingBox
from ..data.rle import RleMask
from ..errors import NumericError
from .anchors import AnchorConfig, generate_anchors
from .boxes import xywh_to_xyxy
from .cascade import CascadeConfig, CascadeHeads, paste_mask
from .pyramid import SimpleFeaturePyramid
from .rpn import RPNHead, propose, rpn_losses
from .vit import BackboneConfig, PlainViT

IMAGE_MEAN = 0.45
IMAGE_STD = 0.25


class CascadeMaskRCNN(nn.Module):
    def __init__(self, backbone_cfg: BackboneConfig, anchor_cfg: AnchorConfig,
                 cascade_cfg: CascadeConfig):
        super().__init__()
        self.backbone_cfg = backbone_cfg
        self.anchor_cfg = anchor_cfg
        self.cascade_cfg = cascade_cfg
        self.backbone = PlainViT(backbone_cfg)
        self.pyramid = SimpleFeaturePyramid(backbone_cfg.embed_dim,
                                            backbone_cfg.pyramid_channels)
        self.rpn_head = RPNHead(backbone_cfg.pyramid_channels,
                                len(anchor_cfg.aspect_ratios))
        self.heads = CascadeHeads(cascade_cfg, backbone_cfg.pyramid_channels)

    def normalize(self, images: torch.Tensor) -> torch.Tensor:
        """uint8 or float [0, 255] images -> standardized, model dtype."""
        dtype = self.backbone.patch_embed.weight.dtype
        return (images.to(dtype) / 255.0 - IMAGE_MEAN) / IMAGE_STD

    def extract(self, images: torch.Tensor):
        fm = self.backbone(self.normalize(images))
        pyramid = self.pyramid(fm)
        shapes = [tuple(lvl.values.shape[-2:]) for lvl in pyramid.levels]
        anchors = generate_anchors(shapes, pyramid.strides, self.anchor_cfg)
        return pyramid, anchors

    def propose_regions(self, pyramid, anchors, image_hw, detach: bool = True):
        level_logits, level_deltas = self.rpn_head(pyramid)
        proposals = propose(
            level_logits, level_deltas, anchors, image_hw,
            pre_nms_topk=self.cascade_cfg.pre_nms_topk,
            post_nms_topk=self.cascade_cfg.post_nms_topk,
            nms_threshold=self.cascade_cfg.rpn_nms_threshold,
            detach=detach,
        )
        return level_logits, level_deltas, proposals

    def forward_train(
        self,
        images: torch.Tensor,
        targets: list[dict[str, torch.Tensor]],
        rng: np.random.Generator,
        detach: bool = True,
    ) -> dict[str, torch.Tensor]:
        """Named losses for one batch; raises NumericError on non-finite values.

        ``detach`` controls whether proposals and between-stage boxes leave
        the autograd graph (they do during normal training; gradient checks
        keep them attached).
        """
        cfg = self.cascade_cfg
        image_hw = tuple(images.shape[-2:])
        pyramid, anchors = self.extract(images)
        level_logits, level_deltas, proposals = self.propose_regions(
            pyramid, anchors, image_hw, detach=detach)

        rpn_cls, rpn_box = rpn_losses(
            level_logits, level_deltas, anchors,
            [t["boxes"] for t in targets],
            pos_iou=cfg.rpn_pos_iou, neg_iou=cfg.rpn_neg_iou,
            sample_size=cfg.rpn_sample_size,
            positive_fraction=cfg.rpn_positive_fraction,
            rng=rng,
        )
        losses: dict[str, torch.Tensor] = {
            "loss_rpn_cls": rpn_cls,
            "loss_rpn_box": rpn_box,
        }

        per_image = []
        for b, target in enumerate(targets):
            per_image.append(self.heads.losses(
                pyramid, b, proposals[b].boxes,
                target["boxes"], target["classes"], target["masks"],
                image_hw, rng, detach_between_stages=detach,
            ))
        for key in per_image[0]:
            losses[f"loss_{key}"] = torch.stack(
                [d[key] for d in per_image]).mean()

        total = losses["loss_rpn_cls"] + losses["loss_rpn_box"]
        for t, weight in enumerate(cfg.stage_loss_weights):
            total = total + weight * (losses[f"loss_stage{t + 1}_cls"]
                                      + losses[f"loss_stage{t + 1}_box"])
        total = total + losses["loss_mask"]
        losses["loss_total"] = total
        for name, value in losses.items():
            if not torch.isfinite(value):
                raise NumericError(f"{name} is non-finite ({float(value)})")
        return losses

    @torch.no_grad()
    def forward_inference(self, images: torch.Tensor) -> list[dict[str, np.ndarray]]:
        image_hw = tuple(images.shape[-2:])
        pyramid, anchors = self.extract(images)
        _, _, proposals = self.propose_regions(pyramid, anchors, image_hw)
        return [
            self.heads.inference(pyramid, b, proposals[b].boxes, image_hw)
            for b in range(images.shape[0])
        ]


def build_detector(backbone_cfg: BackboneConfig, anchor_cfg: AnchorConfig,
                   cascade_cfg: CascadeConfig, seed: int) -> CascadeMaskRCNN:
    """Construct the detector with reproducible parameter initialization."""
    torch.manual_seed(seed)
    return CascadeMaskRCNN(backbone_cfg, anchor_cfg, cascade_cfg)


def targets_from_annotations(annotations, image_hw: tuple[int, int],
                             category_ids: list[int]) -> dict[str, torch.Tensor]:
    """Ground-truth tensors (xyxy boxes, contiguous class ids, dense masks)."""
    index_of = {cid: i for i, cid in enumerate(category_ids)}
    anns = [a for a in annotations if not a.iscrowd]
    if not anns:
        return {
            "boxes": torch.zeros((0, 4), dtype=torch.float32),
            "classes": torch.zeros((0,), dtype=torch.int64),
            "masks": torch.zeros((0,) + image_hw, dtype=torch.float32),
        }
    boxes = xywh_to_xyxy(np.asarray(
        [[a.bbox.x, a.bbox.y, a.bbox.w, a.bbox.h] for a in anns]))
    classes = np.asarray([index_of[a.category_id] for a in anns], dtype=np.int64)
    masks = np.stack([a.mask.to_dense() for a in anns]).astype(np.float32)
    return {
        "boxes": torch.from_numpy(boxes.astype(np.float32)),
        "classes": torch.from_numpy(classes),
        "masks": torch.from_numpy(masks),
    }


def detections_from_output(
    output: dict[str, np.ndarray],
    image_id: int,
    image_hw: tuple[int, int],
    category_ids: list[int],
) -> list[DetectionResult]:
    """Paste roi masks to image resolution and package detections."""
    h, w = image_hw
    results = []
    for box, score, cls, prob in zip(output["boxes"], output["scores"],
                                     output["classes"], output["mask_probs"]):
        if not np.isfinite(score):
            raise NumericError(f"detection score non-finite for image {image_id}")
        dense = paste_mask(prob, box, h, w)
        x0 = float(np.clip(box[0], 0, w))
        y0 = float(np.clip(box[1], 0, h))
        x1 = float(np.clip(box[2], 0, w))
        y1 = float(np.clip(box[3], 0, h))
        results.append(DetectionResult(
            image_id=image_id,
            category_id=category_ids[int(cls)],
            bbox=BoundingBox.from_xyxy(x0, y0, x1, y1),
            score=float(score),
            mask=RleMask.from_dense(dense),
        ))
    return results


def run_inference(
    model: CascadeMaskRCNN,
    manifest: DatasetManifest,
    images: dict[int, np.ndarray],
) -> list[DetectionResult]:
    """Detect on every manifest image (sorted by id) and collect results."""
    model.eval()
    category_ids = sorted(c.id for c in manifest.categories)
    detections: list[DetectionResult] = []
    for info in sorted(manifest.images, key=lambda im: im.id):
        arr = images[info.id]
        tensor = torch.from_numpy(
            np.ascontiguousarray(arr.transpose(2, 0, 1))[None])
        output = model.forward_inference(tensor)[0]
        detections.extend(detections_from_output(
            output, info.id, (info.height, info.width), category_ids))
    return detections

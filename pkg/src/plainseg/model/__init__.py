"""Model components: plain ViT, feature pyramid, proposals, cascade heads."""

from .anchors import AnchorConfig, generate_anchors
from .boxes import assign_targets, clip_xyxy, decode_deltas, encode_deltas
from .cascade import CascadeConfig, CascadeHeads, paste_mask
from .detector import (
    CascadeMaskRCNN,
    build_detector,
    detections_from_output,
    run_inference,
    targets_from_annotations,
)
from .pyramid import FeaturePyramid, SimpleFeaturePyramid
from .roi_align import assign_pyramid_levels, roi_align
from .rpn import Proposal, ProposalSet, RPNHead, propose
from .vit import BackboneConfig, Block, FeatureMap, PlainViT

__all__ = [
    "AnchorConfig",
    "BackboneConfig",
    "Block",
    "CascadeConfig",
    "CascadeHeads",
    "CascadeMaskRCNN",
    "FeatureMap",
    "FeaturePyramid",
    "PlainViT",
    "Proposal",
    "ProposalSet",
    "RPNHead",
    "SimpleFeaturePyramid",
    "assign_pyramid_levels",
    "assign_targets",
    "build_detector",
    "clip_xyxy",
    "decode_deltas",
    "detections_from_output",
    "encode_deltas",
    "generate_anchors",
    "paste_mask",
    "propose",
    "roi_align",
    "run_inference",
    "targets_from_annotations",
]

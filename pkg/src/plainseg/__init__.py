"""plainseg: desk-scale instance segmentation.

Plain (non-hierarchical) ViT backbone with a simple feature pyramid, cascade
detection heads with a mask branch, large-scale-jittering augmentation, an
AdamW + warmup + EMA training loop, and COCO-style mask mAP evaluation.
"""

__version__ = "0.1.0"

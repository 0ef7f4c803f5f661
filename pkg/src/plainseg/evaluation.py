"""Mask (or box) mean average precision under the COCO protocol.

Per category and IoU threshold, detections are greedily matched to ground
truths in descending score order; average precision integrates the precision
envelope at evenly spaced recall points; mAP means over categories that have
ground truth, then over thresholds. Crowd regions can absorb any number of
detections without producing false positives. Score ties break by detection
index so results are order-independent for distinct scores and deterministic
throughout.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data.coco import CategoryDef, DatasetManifest, DetectionResult
from .data.geometry import box_iou
from .data.rle import mask_iou
from .errors import ConfigError, DataError

DEFAULT_IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


@dataclass(frozen=True)
class EvalConfig:
    iou_thresholds: tuple[float, ...] = DEFAULT_IOU_THRESHOLDS
    max_dets_per_image: int = 100
    iou_kind: str = "mask"
    recall_points: int = 101

    def __post_init__(self) -> None:
        if not self.iou_thresholds:
            raise ConfigError("need at least one IoU threshold")
        if any(not 0 < t < 1 for t in self.iou_thresholds):
            raise ConfigError("IoU thresholds must lie in (0, 1)")
        if list(self.iou_thresholds) != sorted(self.iou_thresholds):
            raise ConfigError("IoU thresholds must be sorted")
        if self.iou_kind not in ("mask", "box"):
            raise ConfigError("iou_kind must be 'mask' or 'box'")
        if self.max_dets_per_image < 1 or self.recall_points < 2:
            raise ConfigError("bad max_dets_per_image / recall_points")


@dataclass
class EvalReport:
    map: float | None
    ap50: float | None
    ap75: float | None
    rare_map: float | None
    per_category: dict[int, float | None]
    true_positives: int = 0
    false_positives: int = 0
    unmatched_ground_truths: int = 0

    def to_json(self) -> str:
        return json.dumps({
            "mAP": self.map,
            "ap50": self.ap50,
            "ap75": self.ap75,
            "rare_map": self.rare_map,
            "per_category": {str(k): v for k, v in self.per_category.items()},
            "counts": {
                "true_positives": self.true_positives,
                "false_positives": self.false_positives,
                "unmatched_ground_truths": self.unmatched_ground_truths,
            },
        }, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        doc = json.loads(text)
        counts = doc.get("counts", {})
        return cls(
            map=doc["mAP"],
            ap50=doc["ap50"],
            ap75=doc["ap75"],
            rare_map=doc["rare_map"],
            per_category={int(k): v for k, v in doc["per_category"].items()},
            true_positives=counts.get("true_positives", 0),
            false_positives=counts.get("false_positives", 0),
            unmatched_ground_truths=counts.get("unmatched_ground_truths", 0),
        )


def detection_iou(det: DetectionResult, gt, kind: str) -> float:
    """IoU between one detection and one ground truth annotation."""
    if kind == "mask":
        return mask_iou(det.mask, gt.mask, b_is_crowd=gt.iscrowd)
    if gt.iscrowd:
        ix = min(det.bbox.x + det.bbox.w, gt.bbox.x + gt.bbox.w) - \
            max(det.bbox.x, gt.bbox.x)
        iy = min(det.bbox.y + det.bbox.h, gt.bbox.y + gt.bbox.h) - \
            max(det.bbox.y, gt.bbox.y)
        inter = max(ix, 0.0) * max(iy, 0.0)
        return inter / det.bbox.area if det.bbox.area > 0 else 0.0
    return box_iou(det.bbox, gt.bbox)


TP, FP, IGNORED = 1, 0, -1


def match_from_ious(ious: np.ndarray, iscrowd: np.ndarray,
                    iou_threshold: float) -> tuple[np.ndarray, np.ndarray]:
    """Greedy matching given a (detections x gts) IoU matrix in score order.

    Each detection takes the unmatched non-crowd ground truth of highest IoU
    when that IoU reaches the threshold (ties to the lowest GT index). Failing
    that, a detection overlapping a crowd region at the threshold is ignored;
    otherwise it is a false positive. Returns per-detection flags and
    per-non-crowd-GT matched booleans.
    """
    n, g = ious.shape
    flags = np.full(n, FP, dtype=np.int64)
    gt_taken = np.zeros(g, dtype=bool)
    for i in range(n):
        best_j, best_iou = -1, 0.0
        for j in range(g):
            if iscrowd[j] or gt_taken[j]:
                continue
            if ious[i, j] > best_iou:
                best_j, best_iou = j, ious[i, j]
        if best_j >= 0 and best_iou >= iou_threshold:
            flags[i] = TP
            gt_taken[best_j] = True
            continue
        crowd_hit = any(
            iscrowd[j] and ious[i, j] >= iou_threshold for j in range(g))
        if crowd_hit:
            flags[i] = IGNORED
    return flags, gt_taken


def match_image(
    detections: list[DetectionResult],
    ground_truths: list,
    iou_threshold: float,
    cfg: EvalConfig,
) -> tuple[list[int], list[bool]]:
    """Match one image's detections of one category against its ground truths.

    Returns (flags per detection in the input order, matched flag per GT).
    Only the top ``max_dets_per_image`` detections by score are considered;
    the rest are marked ignored.
    """
    order = sorted(range(len(detections)),
                   key=lambda i: (-detections[i].score, i))
    order = order[: cfg.max_dets_per_image]
    ious = np.asarray([
        [detection_iou(detections[i], gt, cfg.iou_kind) for gt in ground_truths]
        for i in order
    ], dtype=np.float64).reshape(len(order), len(ground_truths))
    iscrowd = np.asarray([gt.iscrowd for gt in ground_truths], dtype=bool)
    flags_sorted, gt_taken = match_from_ious(ious, iscrowd, iou_threshold)
    flags = [IGNORED] * len(detections)
    for pos, i in enumerate(order):
        flags[i] = int(flags_sorted[pos])
    matched = [bool(gt_taken[j]) if not iscrowd[j] else False
               for j in range(len(ground_truths))]
    return flags, matched


def average_precision(
    scored_flags: list[tuple[float, int]],
    num_gt: int,
    cfg: EvalConfig,
) -> float | None:
    """AP from (score, flag) pairs; flags use TP/FP/IGNORED.

    The precision envelope (running maximum from high recall to low) is
    sampled at ``recall_points`` evenly spaced recall values and averaged.
    Returns None when there is no ground truth to recall.
    """
    if num_gt == 0:
        return None
    kept = [(s, f) for s, f in scored_flags if f != IGNORED]
    if not kept:
        return 0.0
    kept.sort(key=lambda sf: -sf[0])
    flags = np.asarray([f for _, f in kept], dtype=np.int64)
    tp_cum = np.cumsum(flags == TP)
    fp_cum = np.cumsum(flags == FP)
    recall = tp_cum / num_gt
    precision = tp_cum / np.maximum(tp_cum + fp_cum, 1)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    points = np.linspace(0.0, 1.0, cfg.recall_points)
    idx = np.searchsorted(recall, points, side="left")
    sampled = np.where(idx < len(envelope), envelope[np.minimum(idx, len(envelope) - 1)], 0.0)
    return float(sampled.mean())


def _mean_or_none(values: list[float | None]) -> float | None:
    present = [v for v in values if v is not None]
    if not present:
        return None
    return float(np.mean(present))


def evaluate(
    detections: list[DetectionResult],
    manifest: DatasetManifest,
    cfg: EvalConfig,
) -> EvalReport:
    """Score detections against a manifest under the configured protocol."""
    image_ids = {im.id for im in manifest.images}
    category_ids = sorted(c.id for c in manifest.categories)
    rare_ids = {c.id for c in manifest.categories if c.is_rare}
    for idx, det in enumerate(detections):
        if det.image_id not in image_ids:
            raise DataError(
                f"detection entry {idx} references unknown image_id {det.image_id}")
        if det.category_id not in set(category_ids):
            raise DataError(
                f"detection entry {idx} references unknown category_id "
                f"{det.category_id}")
        if not np.isfinite(det.score):
            raise DataError(f"detection entry {idx} has non-finite score")

    # per-image cap across categories, by descending score then input order
    dets_by_image: dict[int, list[tuple[int, DetectionResult]]] = \
        {i: [] for i in image_ids}
    for idx, det in enumerate(detections):
        dets_by_image[det.image_id].append((idx, det))
    capped: dict[int, list[tuple[int, DetectionResult]]] = {}
    for image_id, entries in dets_by_image.items():
        entries.sort(key=lambda e: (-e[1].score, e[0]))
        capped[image_id] = entries[: cfg.max_dets_per_image]

    gts_by_image_cat: dict[tuple[int, int], list] = {}
    for ann in manifest.annotations:
        gts_by_image_cat.setdefault((ann.image_id, ann.category_id), []).append(ann)

    num_gt_per_cat = {c: 0 for c in category_ids}
    for ann in manifest.annotations:
        if not ann.iscrowd:
            num_gt_per_cat[ann.category_id] += 1

    ap_by_cat_thr: dict[int, list[float | None]] = {}
    tp50 = fp50 = un50 = 0
    sorted_images = sorted(image_ids)
    for cat in category_ids:
        per_image_data = []
        for image_id in sorted_images:
            dets = [(idx, d) for idx, d in capped[image_id]
                    if d.category_id == cat]
            gts = gts_by_image_cat.get((image_id, cat), [])
            if not dets and not gts:
                continue
            order = sorted(range(len(dets)),
                           key=lambda i: (-dets[i][1].score, dets[i][0]))
            ious = np.asarray([
                [detection_iou(dets[i][1], gt, cfg.iou_kind) for gt in gts]
                for i in order
            ], dtype=np.float64).reshape(len(order), len(gts))
            iscrowd = np.asarray([g.iscrowd for g in gts], dtype=bool)
            scores = [dets[i][1].score for i in order]
            global_idx = [dets[i][0] for i in order]
            per_image_data.append((image_id, scores, global_idx, ious, iscrowd))

        aps: list[float | None] = []
        for thr in cfg.iou_thresholds:
            scored: list[tuple[float, int, int, int]] = []
            unmatched = 0
            for image_id, scores, global_idx, ious, iscrowd in per_image_data:
                flags, gt_taken = match_from_ious(ious, iscrowd, thr)
                for s, gi, f in zip(scores, global_idx, flags):
                    scored.append((s, image_id, gi, int(f)))
                unmatched += int((~gt_taken[~iscrowd]).sum()) if len(iscrowd) else 0
                if thr == 0.5:
                    tp50 += int((flags == TP).sum())
                    fp50 += int((flags == FP).sum())
            if thr == 0.5:
                un50 += unmatched
            scored.sort(key=lambda e: (-e[0], e[1], e[2]))
            aps.append(average_precision(
                [(s, f) for s, _, _, f in scored], num_gt_per_cat[cat], cfg))
        ap_by_cat_thr[cat] = aps

    thr_index = {t: i for i, t in enumerate(cfg.iou_thresholds)}
    per_category = {
        cat: _mean_or_none(ap_by_cat_thr[cat]) for cat in category_ids
    }
    overall = _mean_or_none(list(per_category.values()))
    ap50 = _mean_or_none([
        ap_by_cat_thr[c][thr_index[0.5]] for c in category_ids
    ]) if 0.5 in thr_index else None
    ap75 = _mean_or_none([
        ap_by_cat_thr[c][thr_index[0.75]] for c in category_ids
    ]) if 0.75 in thr_index else None
    rare = _mean_or_none([per_category[c] for c in category_ids if c in rare_ids])
    return EvalReport(
        map=overall,
        ap50=ap50,
        ap75=ap75,
        rare_map=rare,
        per_category=per_category,
        true_positives=tp50,
        false_positives=fp50,
        unmatched_ground_truths=un50,
    )


def _fmt(value: float | None) -> str:
    return "—" if value is None else f"{100.0 * value:.2f}"


def report_render(report: EvalReport,
                  categories: list[CategoryDef] | None = None) -> str:
    """Human-readable table mirroring the report JSON."""
    names = {c.id: c.name for c in categories} if categories else {}
    rare = {c.id for c in categories if c.is_rare} if categories else set()
    lines = [f"{'category':<16}{'AP %':>8}"]
    lines.append("-" * 24)
    for cat_id in sorted(report.per_category):
        label = names.get(cat_id, str(cat_id))
        if cat_id in rare:
            label += " (rare)"
        lines.append(f"{label:<16}{_fmt(report.per_category[cat_id]):>8}")
    lines.append("-" * 24)
    lines.append(f"{'AP@0.50':<16}{_fmt(report.ap50):>8}")
    lines.append(f"{'AP@0.75':<16}{_fmt(report.ap75):>8}")
    lines.append(f"{'rare mAP':<16}{_fmt(report.rare_map):>8}")
    lines.append(f"{'mAP':<16}{_fmt(report.map):>8}")
    lines.append(
        f"matched {report.true_positives} | false positives "
        f"{report.false_positives} | missed {report.unmatched_ground_truths}"
        " (at IoU 0.50)"
    )
    return "\n".join(lines)


def write_report(report: EvalReport, path: str | Path,
                 categories: list[CategoryDef] | None = None) -> None:
    path = Path(path)
    path.write_text(report.to_json())
    table = report_render(report, categories)
    path.with_suffix(".txt").write_text(table + "\n")

"""mAP evaluator: trivial endpoints, oracle agreement, protocol properties."""

import numpy as np
import pytest

from plainseg.data.coco import (
    CategoryDef,
    DatasetManifest,
    DetectionResult,
    ImageInfo,
    InstanceAnnotation,
)
from plainseg.data.geometry import BoundingBox
from plainseg.data.rle import RleMask
from plainseg.errors import DataError
from plainseg.evaluation import (
    EvalConfig,
    EvalReport,
    average_precision,
    evaluate,
    match_image,
    report_render,
)

from oracles import ap_oracle, brute_force_evaluate

SIDE = 24


def make_mask(rng=None, x=None, y=None, w=6, h=6):
    dense = np.zeros((SIDE, SIDE), dtype=np.uint8)
    if x is None:
        x = int(rng.integers(0, SIDE - w))
        y = int(rng.integers(0, SIDE - h))
    dense[y:y + h, x:x + w] = 1
    return RleMask.from_dense(dense), BoundingBox(x, y, w, h)


def make_ann(ann_id, image_id, cat, mask, bbox, iscrowd=False):
    return InstanceAnnotation(id=ann_id, image_id=image_id, category_id=cat,
                              bbox=bbox, mask=mask, area=mask.area,
                              iscrowd=iscrowd)


def make_det(image_id, cat, mask, bbox, score):
    return DetectionResult(image_id=image_id, category_id=cat, bbox=bbox,
                           score=score, mask=mask)


def scene(rng, num_images=3, num_cats=2, dets_per_image=6):
    """Random small scene with overlapping boxes and varied scores."""
    images = [ImageInfo(id=i + 1, file_name=f"{i}.png", height=SIDE, width=SIDE)
              for i in range(num_images)]
    categories = [CategoryDef(id=c + 1, name=f"c{c}", is_rare=(c == num_cats - 1))
                  for c in range(num_cats)]
    manifest = DatasetManifest(images=images, categories=categories)
    ann_id = 1
    for im in images:
        for _ in range(int(rng.integers(0, 4))):
            mask, bbox = make_mask(rng)
            cat = int(rng.integers(1, num_cats + 1))
            manifest.annotations.append(make_ann(ann_id, im.id, cat, mask, bbox))
            ann_id += 1
    detections = []
    for im in images:
        gts = [a for a in manifest.annotations if a.image_id == im.id]
        for _ in range(int(rng.integers(0, dets_per_image + 1))):
            if gts and rng.random() < 0.7:
                src = gts[int(rng.integers(len(gts)))]
                jitter = int(rng.integers(0, 4))
                x = min(max(int(src.bbox.x) + jitter, 0), SIDE - 6)
                y = min(max(int(src.bbox.y) - jitter, 0), SIDE - 6)
                mask, bbox = make_mask(x=x, y=y, w=int(src.bbox.w),
                                       h=int(src.bbox.h))
                cat = src.category_id if rng.random() < 0.8 else \
                    int(rng.integers(1, num_cats + 1))
            else:
                mask, bbox = make_mask(rng)
                cat = int(rng.integers(1, num_cats + 1))
            detections.append(make_det(im.id, cat, mask, bbox,
                                       float(np.round(rng.random(), 3))))
    return manifest, detections


class TestMatchImage:
    def test_simple_tp(self, rng):
        mask, bbox = make_mask(x=2, y=2)
        gt = make_ann(1, 1, 1, mask, bbox)
        det = make_det(1, 1, mask, bbox, 0.9)
        flags, matched = match_image([det], [gt], 0.5, EvalConfig())
        assert flags == [1] and matched == [True]

    def test_no_detections(self):
        mask, bbox = make_mask(x=2, y=2)
        gt = make_ann(1, 1, 1, mask, bbox)
        flags, matched = match_image([], [gt], 0.5, EvalConfig())
        assert flags == [] and matched == [False]

    def test_crowd_absorbs_without_fp(self):
        crowd_mask, crowd_bbox = make_mask(x=0, y=0, w=20, h=20)
        gt = make_ann(1, 1, 1, crowd_mask, crowd_bbox, iscrowd=True)
        d1_mask, d1_bbox = make_mask(x=1, y=1, w=10, h=10)
        d2_mask, d2_bbox = make_mask(x=8, y=8, w=10, h=10)
        dets = [make_det(1, 1, d1_mask, d1_bbox, 0.9),
                make_det(1, 1, d2_mask, d2_bbox, 0.8)]
        flags, matched = match_image(dets, [gt], 0.5, EvalConfig())
        assert flags == [-1, -1]  # ignored, not false positives
        assert matched == [False]

    def test_greedy_prefers_higher_iou(self):
        m_big, b_big = make_mask(x=2, y=2, w=8, h=8)
        m_small, b_small = make_mask(x=2, y=2, w=8, h=6)
        gt_big = make_ann(1, 1, 1, m_big, b_big)
        gt_small = make_ann(2, 1, 1, m_small, b_small)
        det = make_det(1, 1, m_small, b_small, 0.9)
        flags, matched = match_image([det], [gt_big, gt_small], 0.5, EvalConfig())
        assert flags == [1]
        assert matched == [False, True]


class TestAveragePrecision:
    def test_perfect(self):
        cfg = EvalConfig()
        assert average_precision([(0.9, 1), (0.8, 1)], 2, cfg) == 1.0

    def test_no_tp(self):
        cfg = EvalConfig()
        assert average_precision([(0.9, 0)], 3, cfg) == 0.0
        assert average_precision([], 3, cfg) == 0.0

    def test_no_gt_absent(self):
        assert average_precision([(0.9, 0)], 0, EvalConfig()) is None

    def test_two_gt_tp_fp_tp(self):
        cfg = EvalConfig()
        flags = [(0.9, 1), (0.8, 0), (0.7, 1)]
        value = average_precision(flags, 2, cfg)
        # independent step-function enumeration
        expect = ap_oracle(flags, 2, cfg.recall_points)
        assert value == pytest.approx(expect, abs=1e-12)
        # recall 0..0.5 at precision 1, 0.5..1.0 at envelope 2/3
        manual = (51 * 1.0 + 50 * (2.0 / 3.0)) / 101
        assert value == pytest.approx(manual, abs=1e-12)

    def test_against_oracle_random(self, rng):
        cfg = EvalConfig()
        for _ in range(100):
            n = int(rng.integers(0, 12))
            flags = [(float(np.round(rng.random(), 2)),
                      int(rng.choice([1, 0, -1]))) for _ in range(n)]
            num_gt = int(rng.integers(0, 6))
            got = average_precision(flags, num_gt, cfg)
            want = ap_oracle(flags, num_gt, cfg.recall_points)
            if want is None:
                assert got is None
            else:
                assert got == pytest.approx(want, abs=1e-12)


class TestEvaluate:
    def test_gt_as_detections_is_perfect(self, rng):
        manifest, _ = scene(rng)
        dets = [make_det(a.image_id, a.category_id, a.mask, a.bbox, 1.0)
                for a in manifest.annotations]
        report = evaluate(dets, manifest, EvalConfig())
        assert report.map == pytest.approx(1.0)
        assert report.ap50 == pytest.approx(1.0)
        assert report.unmatched_ground_truths == 0
        assert report.false_positives == 0

    def test_empty_detections_zero(self, rng):
        manifest, _ = scene(rng)
        assert manifest.annotations
        report = evaluate([], manifest, EvalConfig())
        assert report.map == 0.0

    def test_matches_brute_force_on_random_scenes(self, rng):
        cfg = EvalConfig()
        for trial in range(50):
            manifest, dets = scene(rng)
            report = evaluate(dets, manifest, cfg)
            want_map, want_per_cat = brute_force_evaluate(
                dets, manifest, cfg.iou_thresholds, cfg.max_dets_per_image,
                cfg.recall_points)
            if want_map is None:
                assert report.map is None
            else:
                assert report.map == pytest.approx(want_map, abs=1e-9), trial
            for cat, want in want_per_cat.items():
                got = report.per_category[cat]
                if want is None:
                    assert got is None
                else:
                    assert got == pytest.approx(want, abs=1e-9)

    def test_rank_only_score_dependence(self, rng):
        manifest, dets = scene(rng)
        base = evaluate(dets, manifest, EvalConfig())
        squeezed = [DetectionResult(d.image_id, d.category_id, d.bbox,
                                    0.1 + 0.8 / (1.0 + np.exp(-3 * d.score)),
                                    d.mask)
                    for d in dets]
        other = evaluate(squeezed, manifest, EvalConfig())
        assert other.map == pytest.approx(base.map, abs=1e-12)

    def test_input_order_invariance(self, rng):
        manifest, dets = scene(rng)
        # force distinct scores
        dets = [DetectionResult(d.image_id, d.category_id, d.bbox,
                                0.1 + 0.8 * i / max(len(dets), 1), d.mask)
                for i, d in enumerate(dets)]
        base = evaluate(dets, manifest, EvalConfig())
        shuffled = list(dets)
        rng.shuffle(shuffled)
        other = evaluate(shuffled, manifest, EvalConfig())
        assert other.map == pytest.approx(base.map, abs=1e-12)
        assert other.per_category == base.per_category

    def test_fp_never_raises_ap(self, rng):
        from plainseg.data.rle import mask_iou

        for _ in range(20):
            manifest, dets = scene(rng)
            base = evaluate(dets, manifest, EvalConfig())
            image_id = manifest.images[0].id
            gts = [a for a in manifest.annotations
                   if a.image_id == image_id and a.category_id == 1]
            noise_mask, noise_bbox = make_mask(rng, w=3, h=3)
            while any(mask_iou(noise_mask, g.mask) >= 0.5 for g in gts):
                noise_mask, noise_bbox = make_mask(rng, w=3, h=3)
            worse = dets + [make_det(image_id, 1, noise_mask,
                                     noise_bbox, float(rng.random()))]
            report = evaluate(worse, manifest, EvalConfig())
            for cat in base.per_category:
                a, b = base.per_category[cat], report.per_category[cat]
                if a is not None and b is not None:
                    assert b <= a + 1e-12

    def test_unknown_references_rejected(self, rng):
        manifest, dets = scene(rng)
        mask, bbox = make_mask(rng)
        with pytest.raises(DataError, match="image_id"):
            evaluate([make_det(999, 1, mask, bbox, 0.5)], manifest, EvalConfig())
        with pytest.raises(DataError, match="category_id"):
            evaluate([make_det(manifest.images[0].id, 99, mask, bbox, 0.5)],
                     manifest, EvalConfig())

    def test_box_iou_kind(self, rng):
        manifest, dets = scene(rng)
        report = evaluate(dets, manifest, EvalConfig(iou_kind="box"))
        assert report.map is None or 0.0 <= report.map <= 1.0


class TestReport:
    def test_render_percent_formatting(self):
        report = EvalReport(map=0.5268, ap50=None, ap75=0.25,
                            rare_map=None, per_category={1: 0.5268, 2: None})
        text = report_render(report, [CategoryDef(1, "disk"),
                                      CategoryDef(2, "ring", is_rare=True)])
        assert "52.68" in text
        assert "—" in text
        assert "ring (rare)" in text

    def test_json_roundtrip(self):
        report = EvalReport(map=0.5, ap50=0.75, ap75=0.4, rare_map=None,
                            per_category={1: 0.5, 2: None},
                            true_positives=3, false_positives=1,
                            unmatched_ground_truths=2)
        back = EvalReport.from_json(report.to_json())
        assert back == report

    def test_absent_categories_excluded_from_mean(self, rng):
        manifest, _ = scene(rng, num_cats=2)
        # keep only category-1 ground truth
        manifest.annotations = [a for a in manifest.annotations
                                if a.category_id == 1]
        if not manifest.annotations:
            mask, bbox = make_mask(x=2, y=2)
            manifest.annotations = [make_ann(1, manifest.images[0].id, 1,
                                             mask, bbox)]
        dets = [make_det(a.image_id, a.category_id, a.mask, a.bbox, 1.0)
                for a in manifest.annotations]
        report = evaluate(dets, manifest, EvalConfig())
        assert report.per_category[2] is None
        assert report.map == pytest.approx(1.0)

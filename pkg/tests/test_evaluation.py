import json
import math
from pathlib import Path

import numpy as np
import pytest

from _oracles import brute_force_ap, optimal_match_tp, raster_iou
from bloomstack.boxes import BoundingBox, Detection
from bloomstack.evaluation import (
    AnnotationSet,
    EmptyGroundTruth,
    ParseError,
    UnknownImage,
    average_precision,
    evaluate_corpus,
    iou,
    load_annotations,
    match_detections,
    precision_recall_f1,
)

FIXTURES = Path(__file__).parent / "fixtures"


def _box(x0, y0, x1, y1):
    return BoundingBox(x0, y0, x1, y1)


def _det(x0, y0, x1, y1, score=0.9):
    return Detection(box=_box(x0, y0, x1, y1), label="bloom", score=score)


def random_box(rng, min_side=0.05):
    """Random valid box on the 1e-3 grid, sides >= min_side."""
    side_cells = int(min_side * 1000)
    x0 = int(rng.integers(0, 1000 - side_cells))
    y0 = int(rng.integers(0, 1000 - side_cells))
    x1 = int(rng.integers(x0 + side_cells, 1001))
    y1 = int(rng.integers(y0 + side_cells, 1001))
    return _box(x0 / 1000, y0 / 1000, x1 / 1000, y1 / 1000)


class TestIoU:
    def test_identical(self):
        b = _box(0.2, 0.3, 0.6, 0.9)
        assert iou(b, b) == 1.0

    def test_disjoint(self):
        assert iou(_box(0, 0, 0.2, 0.2), _box(0.5, 0.5, 0.9, 0.9)) == 0.0

    def test_known_overlap(self):
        # intersection 0.0625, union 0.4375 -> 1/7
        v = iou(_box(0, 0, 0.5, 0.5), _box(0.25, 0.25, 0.75, 0.75))
        assert v == pytest.approx(1 / 7, abs=1e-12)

    def test_touching_edges_count_as_disjoint(self):
        assert iou(_box(0, 0, 0.5, 0.5), _box(0.5, 0, 1.0, 0.5)) == 0.0

    def test_against_raster_oracle(self):
        rng = np.random.default_rng(123)
        for _ in range(300):
            a, b = random_box(rng), random_box(rng)
            expected = raster_iou(
                (a.top_x, a.top_y, a.bottom_x, a.bottom_y),
                (b.top_x, b.top_y, b.bottom_x, b.bottom_y),
            )
            assert iou(a, b) == pytest.approx(expected, abs=2e-3)

    def test_symmetry_and_range(self):
        rng = np.random.default_rng(321)
        for _ in range(200):
            a, b = random_box(rng), random_box(rng)
            v = iou(a, b)
            assert 0.0 <= v <= 1.0
            assert v == iou(b, a)


class TestMatching:
    def test_perfect_single(self):
        gts = AnnotationSet({"a.jpg": [_box(0.1, 0.1, 0.5, 0.5)]})
        report = match_detections({"a.jpg": [_det(0.1, 0.1, 0.5, 0.5)]}, gts, 0.55)
        counts = report.per_image["a.jpg"]
        assert (counts.tp, counts.fp, counts.fn) == (1, 0, 0)

    def test_two_preds_one_gt(self):
        gt = _box(0.1, 0.1, 0.5, 0.5)
        preds = [_det(0.1, 0.1, 0.5, 0.5, 0.9), _det(0.12, 0.1, 0.52, 0.5, 0.8)]
        gts = AnnotationSet({"a.jpg": [gt]})
        report = match_detections({"a.jpg": preds}, gts, 0.55)
        counts = report.per_image["a.jpg"]
        assert (counts.tp, counts.fp, counts.fn) == (1, 1, 0)
        # Brute-force optimal assignment agrees on this instance.
        assert optimal_match_tp(
            [(p.box.top_x, p.box.top_y, p.box.bottom_x, p.box.bottom_y) for p in preds],
            [(gt.top_x, gt.top_y, gt.bottom_x, gt.bottom_y)],
            0.55,
        ) == 1

    def test_below_threshold_is_fp_and_fn(self):
        # IoU = 0.5: half-width overlap of two unit-height boxes.
        gt = _box(0.0, 0.0, 0.4, 0.4)
        pred = _det(0.2, 0.0, 0.6, 0.4)
        assert iou(pred.box, gt) == pytest.approx(1 / 3, abs=1e-12)
        gts = AnnotationSet({"a.jpg": [gt]})
        counts = match_detections({"a.jpg": [pred]}, gts, 0.55).per_image["a.jpg"]
        assert (counts.tp, counts.fp, counts.fn) == (0, 1, 1)

    def test_threshold_boundary_inclusive(self):
        # inter 0.033 / union 0.060 computes to exactly float 0.55, so this
        # pair sits exactly on the threshold and must count as a match.
        gt = _box(0.0, 0.0, 0.050, 1.0)
        pred = _det(0.017, 0.0, 0.060, 1.0)
        assert iou(pred.box, gt) == 0.55
        gts = AnnotationSet({"a.jpg": [gt]})
        counts = match_detections({"a.jpg": [pred]}, gts, 0.55).per_image["a.jpg"]
        assert (counts.tp, counts.fp, counts.fn) == (1, 0, 0)

    def test_greedy_prefers_higher_iou_gt(self):
        gts = AnnotationSet(
            {"a.jpg": [_box(0.0, 0.0, 0.4, 0.4), _box(0.05, 0.05, 0.45, 0.45)]}
        )
        preds = {"a.jpg": [_det(0.05, 0.05, 0.45, 0.45, 0.9)]}
        report = match_detections(preds, gts, 0.55)
        assert report.flagged[0].matched_gt == 1

    def test_counting_identity_random(self):
        rng = np.random.default_rng(11)
        for _ in range(30):
            gts = {}
            preds = {}
            for i in range(int(rng.integers(1, 5))):
                name = f"im{i}.jpg"
                gts[name] = [random_box(rng) for _ in range(int(rng.integers(0, 5)))]
                preds[name] = [
                    _det(*_corners(random_box(rng)), score=float(rng.random()))
                    for _ in range(int(rng.integers(0, 5)))
                ]
            report = match_detections(preds, AnnotationSet(gts), 0.5)
            total_gt = sum(len(v) for v in gts.values())
            total_pred = sum(len(v) for v in preds.values())
            assert report.tp + report.fn == total_gt
            assert report.tp + report.fp == total_pred

    def test_tp_monotone_in_threshold(self):
        rng = np.random.default_rng(13)
        for _ in range(20):
            gts = {"a.jpg": [random_box(rng) for _ in range(4)]}
            preds = {
                "a.jpg": [
                    _det(*_corners(random_box(rng)), score=float(rng.random()))
                    for _ in range(6)
                ]
            }
            annotations = AnnotationSet(gts)
            tps = [
                match_detections(preds, annotations, thr).tp
                for thr in (0.1, 0.3, 0.5, 0.7, 0.9)
            ]
            assert tps == sorted(tps, reverse=True)

    def test_strict_unknown_image(self):
        gts = AnnotationSet({"known.jpg": []})
        preds = {"mystery.jpg": [_det(0.1, 0.1, 0.2, 0.2)]}
        with pytest.raises(UnknownImage):
            match_detections(preds, gts, 0.55, strict=True)
        # Non-strict counts them as false positives.
        assert match_detections(preds, gts, 0.55).fp == 1


def _corners(b: BoundingBox):
    return b.top_x, b.top_y, b.bottom_x, b.bottom_y


class TestPrecisionRecallF1:
    def test_paper_precision(self):
        precision, recall, _ = precision_recall_f1(84, 16, 0)
        assert precision == 0.84
        assert recall == 1.0

    def test_f1_from_components(self):
        # Harmonic mean of 0.84 and 0.99.
        f1 = 2 * 0.84 * 0.99 / (0.84 + 0.99)
        assert f1 == pytest.approx(0.9088524590163934, abs=1e-12)

    def test_all_zero_convention(self):
        assert precision_recall_f1(0, 0, 0) == (1.0, 1.0, 1.0)

    def test_no_predictions(self):
        precision, recall, f1 = precision_recall_f1(0, 0, 5)
        assert precision == 1.0
        assert recall == 0.0
        assert f1 == 0.0

    def test_no_ground_truth(self):
        precision, recall, _ = precision_recall_f1(0, 5, 0)
        assert precision == 0.0
        assert recall == 1.0

    def test_f1_between_min_and_max(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            tp, fp, fn = (int(rng.integers(0, 20)) for _ in range(3))
            precision, recall, f1 = precision_recall_f1(tp, fp, fn)
            if precision + recall > 0:
                assert min(precision, recall) - 1e-12 <= f1 <= max(precision, recall) + 1e-12

    def test_negative_counts_rejected(self):
        with pytest.raises(ValueError):
            precision_recall_f1(-1, 0, 0)


class TestAveragePrecision:
    def test_single_perfect(self):
        gts = AnnotationSet({"a.jpg": [_box(0.1, 0.1, 0.5, 0.5)]})
        assert average_precision({"a.jpg": [_det(0.1, 0.1, 0.5, 0.5)]}, gts, 0.55) == 1.0

    def test_all_false_positives(self):
        gts = AnnotationSet({"a.jpg": [_box(0.1, 0.1, 0.5, 0.5)]})
        preds = {"a.jpg": [_det(0.6, 0.6, 0.9, 0.9)]}
        assert average_precision(preds, gts, 0.55) == 0.0

    def test_no_predictions_is_zero(self):
        gts = AnnotationSet({"a.jpg": [_box(0.1, 0.1, 0.5, 0.5)]})
        assert average_precision({}, gts, 0.55) == 0.0

    def test_empty_ground_truth_rejected(self):
        with pytest.raises(EmptyGroundTruth):
            average_precision({}, AnnotationSet({"a.jpg": []}), 0.55)

    def test_matches_brute_force_on_random_corpora(self):
        rng = np.random.default_rng(99)
        score_grid = [round(0.1 * i, 1) for i in range(1, 10)]
        for _ in range(25):
            gts, preds = {}, {}
            for i in range(int(rng.integers(1, 4))):
                name = f"im{i}.jpg"
                gts[name] = [random_box(rng) for _ in range(int(rng.integers(0, 4)))]
                preds[name] = [
                    _det(*_corners(random_box(rng)), score=float(rng.choice(score_grid)))
                    for _ in range(int(rng.integers(0, 6)))
                ]
            if sum(len(v) for v in gts.values()) == 0:
                gts["im0.jpg"] = [random_box(rng)]
            expected = brute_force_ap(
                {
                    n: [(d.score, _corners(d.box)) for d in ps]
                    for n, ps in preds.items()
                },
                {n: [_corners(b) for b in bs] for n, bs in gts.items()},
                0.55,
            )
            assert average_precision(preds, gts and AnnotationSet(gts), 0.55) == expected


class TestEvaluateCorpus:
    def test_golden_report(self, tmp_path):
        report = evaluate_corpus(
            FIXTURES / "eval_corpus" / "preds",
            FIXTURES / "eval_corpus" / "gt.json",
            0.55,
            out_path=tmp_path / "report.json",
        )
        golden = json.loads((FIXTURES / "eval_corpus" / "golden_report.json").read_text())
        assert report.tp == golden["tp"]
        assert report.fp == golden["fp"]
        assert report.fn == golden["fn"]
        assert report.precision == pytest.approx(golden["precision"], rel=1e-12)
        assert report.recall == pytest.approx(golden["recall"], rel=1e-12)
        assert report.f1 == pytest.approx(golden["f1"], rel=1e-12)
        assert report.ap == pytest.approx(golden["ap"], rel=1e-12)
        assert report.map == report.ap
        per_image = {
            name: {"tp": c.tp, "fp": c.fp, "fn": c.fn}
            for name, c in report.per_image.items()
        }
        assert per_image == golden["per_image"]
        written = json.loads((tmp_path / "report.json").read_text())
        assert written["tp"] == golden["tp"]

    def test_predictions_equal_ground_truth(self, tmp_path):
        gt_doc = {
            "images": [
                {
                    "filename": "x.jpg",
                    "boxes": [{"topX": 0.1, "topY": 0.1, "bottomX": 0.4, "bottomY": 0.4}],
                }
            ]
        }
        (tmp_path / "gt.json").write_text(json.dumps(gt_doc))
        preds = tmp_path / "preds"
        preds.mkdir()
        (preds / "x.json").write_text(
            json.dumps(
                {
                    "filename": "x.jpg",
                    "boxes": [
                        {
                            "box": {"topX": 0.1, "topY": 0.1, "bottomX": 0.4, "bottomY": 0.4},
                            "label": "bloom",
                            "score": 1.0,
                        }
                    ],
                }
            )
        )
        report = evaluate_corpus(preds, tmp_path / "gt.json", 0.55)
        assert (report.precision, report.recall, report.f1, report.ap) == (1.0, 1.0, 1.0, 1.0)

    def test_empty_prediction_dir(self, tmp_path):
        gts = {
            "images": [
                {
                    "filename": "x.jpg",
                    "boxes": [
                        {"topX": 0.1, "topY": 0.1, "bottomX": 0.4, "bottomY": 0.4},
                        {"topX": 0.5, "topY": 0.5, "bottomX": 0.8, "bottomY": 0.8},
                    ],
                }
            ]
        }
        (tmp_path / "gt.json").write_text(json.dumps(gts))
        preds = tmp_path / "preds"
        preds.mkdir()
        report = evaluate_corpus(preds, tmp_path / "gt.json", 0.55)
        assert report.recall == 0.0
        assert report.fn == 2
        assert report.ap == 0.0

    def test_parse_error_carries_position(self, tmp_path):
        (tmp_path / "gt.json").write_text('{"images": [oops]}')
        preds = tmp_path / "preds"
        preds.mkdir()
        with pytest.raises(ParseError) as err:
            evaluate_corpus(preds, tmp_path / "gt.json", 0.55)
        assert err.value.position > 0
        assert "gt.json" in err.value.file

    def test_duplicate_gt_filename_rejected(self, tmp_path):
        doc = {
            "images": [
                {"filename": "x.jpg", "boxes": []},
                {"filename": "x.jpg", "boxes": []},
            ]
        }
        (tmp_path / "gt.json").write_text(json.dumps(doc))
        with pytest.raises(ParseError):
            load_annotations(tmp_path / "gt.json")

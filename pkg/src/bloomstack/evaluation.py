"""Detection-quality metrics: IoU, matching, precision/recall/F1, AP.

Matching is greedy in descending score order with one-to-one assignment
(Pascal-VOC style): each prediction takes the unmatched ground-truth box
of highest IoU at or above the threshold, ties broken by lowest
ground-truth index. AP uses all-point interpolation with one
precision/recall sample per distinct score value, which makes the sweep
agree exactly with brute-force threshold enumeration.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from .boxes import BoundingBox, Detection, InvalidBox, detections_from_json


class EvaluationError(Exception):
    pass


class ParseError(EvaluationError):
    def __init__(self, file: str, position: int, reason: str):
        super().__init__(f"{file}:{position}: {reason}")
        self.file = file
        self.position = position
        self.reason = reason


class UnknownImage(EvaluationError):
    """Prediction refers to an image absent from the ground truth (strict mode)."""


class EmptyGroundTruth(EvaluationError):
    """AP is undefined with zero ground-truth boxes."""


@dataclass
class AnnotationSet:
    """Ground truth: image filename -> list of boxes (single class)."""

    images: dict[str, list[BoundingBox]]

    @property
    def total_boxes(self) -> int:
        return sum(len(b) for b in self.images.values())


def load_annotations(path: str | Path) -> AnnotationSet:
    path = Path(path)
    obj = _load_json(path)
    entries = obj.get("images")
    if not isinstance(entries, list):
        raise ParseError(str(path), 0, "expected top-level {'images': [...]}")
    images: dict[str, list[BoundingBox]] = {}
    for entry in entries:
        try:
            filename = str(entry["filename"])
            boxes = [BoundingBox.from_json(b) for b in entry["boxes"]]
        except (KeyError, TypeError, InvalidBox) as exc:
            raise ParseError(str(path), 0, f"bad annotation entry: {exc}") from exc
        if filename in images:
            raise ParseError(str(path), 0, f"duplicate filename: {filename}")
        images[filename] = boxes
    return AnnotationSet(images=images)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection area over union area; 0 when disjoint."""
    a.validate()
    b.validate()
    ix = min(a.bottom_x, b.bottom_x) - max(a.top_x, b.top_x)
    iy = min(a.bottom_y, b.bottom_y) - max(a.top_y, b.top_y)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    union = a.area + b.area - inter
    return inter / union


@dataclass(frozen=True)
class ImageCounts:
    tp: int
    fp: int
    fn: int


@dataclass(frozen=True)
class FlaggedPrediction:
    filename: str
    detection: Detection
    matched_gt: int | None  # ground-truth index within the image, None = FP


@dataclass
class MatchReport:
    per_image: dict[str, ImageCounts]
    flagged: list[FlaggedPrediction]

    @property
    def tp(self) -> int:
        return sum(c.tp for c in self.per_image.values())

    @property
    def fp(self) -> int:
        return sum(c.fp for c in self.per_image.values())

    @property
    def fn(self) -> int:
        return sum(c.fn for c in self.per_image.values())


def _sorted_preds(preds: Iterable[Detection]) -> list[Detection]:
    # Stable: equal scores keep their input order.
    return sorted(preds, key=lambda d: -d.score)


def _best_gt(
    det: Detection, gt_boxes: list[BoundingBox], unmatched: set[int], threshold: float
) -> int | None:
    best_i: int | None = None
    best_v = 0.0
    for i in sorted(unmatched):
        v = iou(det.box, gt_boxes[i])
        if v >= threshold and v > best_v:
            best_i, best_v = i, v
    return best_i


def match_detections(
    preds: dict[str, list[Detection]],
    gts: AnnotationSet,
    iou_threshold: float,
    strict: bool = False,
) -> MatchReport:
    """Greedy one-to-one matching of predictions to ground truth per image."""
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must be in (0, 1], got {iou_threshold}")
    per_image: dict[str, ImageCounts] = {}
    flagged: list[FlaggedPrediction] = []
    for filename in sorted(set(preds) | set(gts.images)):
        if strict and filename in preds and filename not in gts.images:
            raise UnknownImage(filename)
        gt_boxes = gts.images.get(filename, [])
        unmatched = set(range(len(gt_boxes)))
        tp = fp = 0
        for det in _sorted_preds(preds.get(filename, [])):
            hit = _best_gt(det, gt_boxes, unmatched, iou_threshold)
            if hit is None:
                fp += 1
            else:
                unmatched.discard(hit)
                tp += 1
            flagged.append(FlaggedPrediction(filename, det, hit))
        per_image[filename] = ImageCounts(tp=tp, fp=fp, fn=len(unmatched))
    return MatchReport(per_image=per_image, flagged=flagged)


def precision_recall_f1(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    """Precision, recall, and F1 from match counts.

    Degenerate denominators: precision is 1 with no predictions, recall is
    1 with no ground truth, and F1 is 0 when precision + recall is 0 --
    except the all-empty case, which yields (1, 1, 1). This keeps reports
    total functions of their inputs.
    """
    if min(tp, fp, fn) < 0:
        raise ValueError("counts must be non-negative")
    precision = tp / (tp + fp) if (tp + fp) > 0 else 1.0
    recall = tp / (tp + fn) if (tp + fn) > 0 else 1.0
    if precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    else:
        f1 = 0.0
    return precision, recall, f1


def average_precision(
    preds: dict[str, list[Detection]],
    gts: AnnotationSet,
    iou_threshold: float,
) -> float:
    """Corpus-wide AP at one IoU threshold, all-point interpolation."""
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must be in (0, 1], got {iou_threshold}")
    total_gt = gts.total_boxes
    if total_gt == 0:
        raise EmptyGroundTruth("no ground-truth boxes in corpus")

    # Global descending-score order; ties resolved by filename then
    # per-image rank so the sweep is deterministic.
    ordered: list[tuple[float, str, int, Detection]] = []
    for filename in sorted(preds):
        for rank, det in enumerate(_sorted_preds(preds[filename])):
            ordered.append((det.score, filename, rank, det))
    ordered.sort(key=lambda item: (-item[0], item[1], item[2]))

    unmatched = {f: set(range(len(b))) for f, b in gts.images.items()}
    tp = fp = 0
    recalls: list[float] = []
    precisions: list[float] = []
    i = 0
    while i < len(ordered):
        score = ordered[i][0]
        # Consume the whole tie group before sampling a PR point: a score
        # threshold cannot distinguish tied predictions.
        while i < len(ordered) and ordered[i][0] == score:
            _, filename, _, det = ordered[i]
            pool = unmatched.get(filename, set())
            hit = _best_gt(det, gts.images.get(filename, []), pool, iou_threshold)
            if hit is None:
                fp += 1
            else:
                pool.discard(hit)
                tp += 1
            i += 1
        recalls.append(tp / total_gt)
        precisions.append(tp / (tp + fp))
    return interpolated_ap(recalls, precisions)


def interpolated_ap(recalls: list[float], precisions: list[float]) -> float:
    """Area under the PR curve with the max-to-the-right precision envelope."""
    if not recalls:
        return 0.0
    mrec = [0.0] + list(recalls) + [1.0]
    mpre = [0.0] + list(precisions) + [0.0]
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    ap = 0.0
    for i in range(1, len(mrec)):
        ap += (mrec[i] - mrec[i - 1]) * mpre[i]
    return ap


@dataclass
class EvalReport:
    iou_threshold: float
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    ap: float
    map: float
    per_image: dict[str, ImageCounts] = field(default_factory=dict)

    def to_json(self) -> dict[str, Any]:
        return {
            "iou_threshold": self.iou_threshold,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "ap": self.ap,
            "map": self.map,
            "per_image": {
                f: {"tp": c.tp, "fp": c.fp, "fn": c.fn}
                for f, c in sorted(self.per_image.items())
            },
        }


def load_predictions_dir(pred_dir: str | Path) -> dict[str, list[Detection]]:
    """Read every detection JSON document under pred_dir (service schema)."""
    pred_dir = Path(pred_dir)
    preds: dict[str, list[Detection]] = {}
    for path in sorted(pred_dir.rglob("*.json")):
        obj = _load_json(path)
        try:
            filename, dets = detections_from_json(obj)
        except InvalidBox as exc:
            raise ParseError(str(path), 0, str(exc)) from exc
        if not filename:
            filename = path.stem
        preds.setdefault(filename, []).extend(dets)
    return preds


def evaluate_corpus(
    pred_dir: str | Path,
    gt_file: str | Path,
    iou_threshold: float,
    strict: bool = False,
    out_path: str | Path | None = None,
) -> EvalReport:
    """Compare a directory of detection documents against ground truth."""
    gts = load_annotations(gt_file)
    preds = load_predictions_dir(pred_dir)
    matched = match_detections(preds, gts, iou_threshold, strict=strict)
    tp, fp, fn = matched.tp, matched.fp, matched.fn
    precision, recall, f1 = precision_recall_f1(tp, fp, fn)
    ap = average_precision(preds, gts, iou_threshold)
    report = EvalReport(
        iou_threshold=iou_threshold,
        tp=tp,
        fp=fp,
        fn=fn,
        precision=precision,
        recall=recall,
        f1=f1,
        ap=ap,
        map=ap,  # single detection class
        per_image=matched.per_image,
    )
    if out_path is not None:
        Path(out_path).write_text(json.dumps(report.to_json(), indent=2) + "\n")
    return report


def _load_json(path: Path) -> dict[str, Any]:
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(str(path), 0, f"unreadable: {exc}") from exc
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(str(path), exc.pos, exc.msg) from exc
    if not isinstance(obj, dict):
        raise ParseError(str(path), 0, "expected a JSON object")
    return obj

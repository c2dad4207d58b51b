"""Generate the committed binary/JSON fixtures.

Run from the repo root:  python3 tests/make_fixtures.py

Everything is seeded, so regeneration is reproducible. The golden
evaluation report is computed purely with the oracles in _oracles.py.
"""

from __future__ import annotations

import io
import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image

sys.path.insert(0, str(Path(__file__).parent))
from _oracles import brute_force_ap, greedy_match

FIXTURES = Path(__file__).parent / "fixtures"

# Planted squares in two_squares.png: (row0, col0, size), image is 100x100.
SQUARES = ((20, 15, 10), (60, 70, 10))


def make_field_image() -> None:
    """Pseudo-natural 530x144 field strip: greens, soil, white bloom blobs."""
    rng = np.random.default_rng(42)
    h, w = 144, 530
    y = np.linspace(0, 1, h)[:, None] * np.ones((1, w))
    base = np.stack(
        [40 + 30 * y, 90 + 60 * y, 35 + 20 * y], axis=2
    )  # green-ish gradient
    noise = rng.normal(0, 18, size=(h, w, 3))
    img = base + noise
    # Soil streaks.
    for _ in range(6):
        cx = rng.integers(0, w)
        half = int(rng.integers(8, 25))
        img[:, max(0, cx - half) : min(w, cx + half), 0] += 35
        img[:, max(0, cx - half) : min(w, cx + half), 1] += 10
    # Bloom-like bright blobs.
    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(12):
        cy, cx = rng.integers(10, h - 10), rng.integers(10, w - 10)
        r = rng.integers(3, 7)
        blob = np.exp(-(((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r**2)))
        img += 160 * blob[:, :, None]
    arr = np.clip(img, 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr, "RGB").save(buf, format="JPEG", quality=92)
    original = buf.getvalue()
    (FIXTURES / "field_530x144.jpg").write_bytes(original)

    # Sanity: recompression at quality 30 must shrink the file.
    buf30 = io.BytesIO()
    Image.open(io.BytesIO(original)).save(buf30, format="JPEG", quality=30)
    assert len(buf30.getvalue()) < len(original), "q30 re-encode did not shrink"
    print(f"field_530x144.jpg: {len(original)} bytes (q30: {len(buf30.getvalue())})")


def make_two_squares() -> None:
    arr = np.zeros((100, 100, 3), dtype=np.uint8)
    for r0, c0, size in SQUARES:
        arr[r0 : r0 + size, c0 : c0 + size] = 255
    Image.fromarray(arr, "RGB").save(FIXTURES / "two_squares.png", format="PNG")
    print("two_squares.png written")


def make_mock_table() -> None:
    table = {
        "july14/f001.jpg": [
            {
                "box": {"topX": 0.1, "topY": 0.2, "bottomX": 0.3, "bottomY": 0.5},
                "label": "bloom",
                "score": 0.97,
            },
            {
                "box": {"topX": 0.55, "topY": 0.1, "bottomX": 0.8, "bottomY": 0.4},
                "label": "bloom",
                "score": 0.88,
            },
        ],
        "empty.jpg": [],
    }
    (FIXTURES / "mock_detections.json").write_text(json.dumps(table, indent=2) + "\n")
    print("mock_detections.json written")


def _random_box(rng: np.random.Generator) -> tuple[float, float, float, float]:
    # Coordinates on a 1e-3 grid with sides >= 0.05.
    x0 = rng.integers(0, 900) / 1000
    y0 = rng.integers(0, 900) / 1000
    wdt = rng.integers(50, min(400, int((1 - x0) * 1000))) / 1000
    hgt = rng.integers(50, min(400, int((1 - y0) * 1000))) / 1000
    return (float(x0), float(y0), float(x0 + wdt), float(y0 + hgt))


def _jitter(rng: np.random.Generator, box, amount=0.02):
    x0, y0, x1, y1 = box
    d = lambda: rng.integers(-int(amount * 1000), int(amount * 1000) + 1) / 1000
    nx0, ny0 = max(0.0, x0 + d()), max(0.0, y0 + d())
    nx1, ny1 = min(1.0, x1 + d()), min(1.0, y1 + d())
    if nx1 - nx0 < 0.01:
        nx0, nx1 = x0, x1
    if ny1 - ny0 < 0.01:
        ny0, ny1 = y0, y1
    return (float(nx0), float(ny0), float(nx1), float(ny1))


def make_eval_corpus(iou_threshold: float = 0.55) -> None:
    rng = np.random.default_rng(7)
    corpus = FIXTURES / "eval_corpus"
    preds_dir = corpus / "preds"
    preds_dir.mkdir(parents=True, exist_ok=True)

    gts: dict[str, list] = {}
    preds: dict[str, list] = {}
    score_grid = [round(0.05 * i, 2) for i in range(4, 20)]  # deliberate ties
    for idx in range(20):
        name = f"img{idx:03d}.jpg"
        n_gt = int(rng.integers(0, 5))
        gt_boxes = [_random_box(rng) for _ in range(n_gt)]
        gts[name] = gt_boxes
        scored = []
        for gt in gt_boxes:
            if rng.random() < 0.8:  # mostly-detected ground truth
                scored.append((float(rng.choice(score_grid)), _jitter(rng, gt)))
        for _ in range(int(rng.integers(0, 3))):  # false positives
            scored.append((float(rng.choice(score_grid)), _random_box(rng)))
        preds[name] = scored

    gt_doc = {
        "images": [
            {
                "filename": name,
                "boxes": [
                    {"topX": b[0], "topY": b[1], "bottomX": b[2], "bottomY": b[3]}
                    for b in boxes
                ],
            }
            for name, boxes in sorted(gts.items())
        ]
    }
    (corpus / "gt.json").write_text(json.dumps(gt_doc, indent=2) + "\n")

    for name, scored in sorted(preds.items()):
        doc = {
            "filename": name,
            "boxes": [
                {
                    "box": {"topX": b[0], "topY": b[1], "bottomX": b[2], "bottomY": b[3]},
                    "label": "bloom",
                    "score": s,
                }
                for s, b in scored
            ],
        }
        stem = name.rsplit(".", 1)[0]
        (preds_dir / f"{stem}.json").write_text(json.dumps(doc, indent=2) + "\n")

    # Golden numbers from the oracles only.
    per_image = {}
    tp = fp = fn = 0
    for name in sorted(gts):
        itp, ifp = greedy_match(preds[name], gts[name], iou_threshold)
        ifn = len(gts[name]) - itp
        per_image[name] = {"tp": itp, "fp": ifp, "fn": ifn}
        tp, fp, fn = tp + itp, fp + ifp, fn + ifn
    precision = tp / (tp + fp) if tp + fp else 1.0
    recall = tp / (tp + fn) if tp + fn else 1.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    ap = brute_force_ap(preds, gts, iou_threshold)
    golden = {
        "iou_threshold": iou_threshold,
        "tp": tp,
        "fp": fp,
        "fn": fn,
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "ap": ap,
        "map": ap,
        "per_image": per_image,
    }
    (corpus / "golden_report.json").write_text(json.dumps(golden, indent=2) + "\n")
    print(f"eval corpus: tp={tp} fp={fp} fn={fn} ap={ap:.6f}")


if __name__ == "__main__":
    FIXTURES.mkdir(exist_ok=True)
    make_field_image()
    make_two_squares()
    make_mock_table()
    make_eval_corpus()

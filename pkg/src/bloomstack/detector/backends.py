"""Detection backends.

ThresholdBackend is a real pixel-based reference detector in the
classic bright-region tradition: binarize on per-pixel min(R, G, B),
label connected components, and box the ones large enough to matter.
MockBackend replays scripted detections keyed by filename so
end-to-end pipeline tests are fully deterministic. Both are pure
functions over request-owned buffers and safe for concurrent use. A
trained model can be plugged in behind the same interface.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np
from scipy import ndimage

from ..boxes import BoundingBox, Detection, InvalidBox


class DetectorBackend(Protocol):
    name: str

    def detect(self, image: np.ndarray, filename: str = "") -> list[Detection]: ...


class FixtureError(ValueError):
    """Mock fixture file is malformed or violates detection invariants."""


# 4-connectivity avoids spurious diagonal merges on noisy masks.
_STRUCT_4 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
_STRUCT_8 = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class ThresholdParams:
    brightness_threshold: int = 200
    min_area_px: int = 20
    max_boxes: int = 50
    connectivity: int = 4

    def __post_init__(self) -> None:
        if not 0 <= self.brightness_threshold <= 255:
            raise ValueError("brightness_threshold must be in 0..255")
        if self.min_area_px < 1:
            raise ValueError("min_area_px must be >= 1")
        if self.max_boxes < 1:
            raise ValueError("max_boxes must be >= 1")
        if self.connectivity not in (4, 8):
            raise ValueError("connectivity must be 4 or 8")


class ThresholdBackend:
    name = "threshold"

    def __init__(self, params: ThresholdParams | None = None):
        self.params = params or ThresholdParams()

    def detect(self, image: np.ndarray, filename: str = "") -> list[Detection]:
        p = self.params
        h, w = image.shape[:2]
        darkest = image.min(axis=2)  # a pixel is "white" only if all channels are
        mask = darkest >= p.brightness_threshold
        structure = _STRUCT_4 if p.connectivity == 4 else _STRUCT_8
        labels, count = ndimage.label(mask, structure=structure)
        detections: list[Detection] = []
        for index, slices in enumerate(ndimage.find_objects(labels), start=1):
            if slices is None:
                continue
            component = labels[slices] == index
            area = int(component.sum())
            if area < p.min_area_px:
                continue
            ys, xs = slices
            box = BoundingBox(
                top_x=xs.start / w,
                top_y=ys.start / h,
                bottom_x=xs.stop / w,
                bottom_y=ys.stop / h,
            )
            score = float(darkest[slices][component].mean()) / 255.0
            detections.append(Detection(box=box, label="bloom", score=score))
        detections.sort(key=lambda d: (-d.score, d.box.top_y, d.box.top_x))
        return detections[: p.max_boxes]


class MockBackend:
    name = "mock"

    def __init__(self, table: dict[str, list[Detection]]):
        self.table = table

    @classmethod
    def from_file(cls, path: str | Path) -> "MockBackend":
        try:
            obj = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise FixtureError(f"cannot load fixture table {path}: {exc}") from exc
        if not isinstance(obj, dict):
            raise FixtureError("fixture table must map filename -> [detections]")
        table: dict[str, list[Detection]] = {}
        for filename, entries in obj.items():
            try:
                table[filename] = [Detection.from_json(e) for e in entries]
            except (InvalidBox, TypeError) as exc:
                raise FixtureError(f"fixture entry {filename!r} invalid: {exc}") from exc
        return cls(table)

    def detect(self, image: np.ndarray, filename: str = "") -> list[Detection]:
        return list(self.table.get(filename, []))

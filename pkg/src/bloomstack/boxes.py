"""Normalized bounding boxes and detections.

Boxes use fractional corner coordinates relative to image width/height,
so detections survive compression and slicing unchanged. The JSON corner
names (topX/topY/bottomX/bottomY) are the canonical interchange schema
shared by the detector service, the renderer, and the evaluator.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any


class InvalidBox(ValueError):
    """Box corners violate 0 <= top < bottom <= 1 on some axis."""


@dataclass(frozen=True)
class BoundingBox:
    top_x: float
    top_y: float
    bottom_x: float
    bottom_y: float

    def validate(self) -> "BoundingBox":
        if not (0.0 <= self.top_x < self.bottom_x <= 1.0):
            raise InvalidBox(f"x corners out of order or range: {self.top_x}, {self.bottom_x}")
        if not (0.0 <= self.top_y < self.bottom_y <= 1.0):
            raise InvalidBox(f"y corners out of order or range: {self.top_y}, {self.bottom_y}")
        return self

    @property
    def area(self) -> float:
        return (self.bottom_x - self.top_x) * (self.bottom_y - self.top_y)

    def to_json(self) -> dict[str, float]:
        return {
            "topX": self.top_x,
            "topY": self.top_y,
            "bottomX": self.bottom_x,
            "bottomY": self.bottom_y,
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "BoundingBox":
        try:
            box = cls(
                top_x=float(obj["topX"]),
                top_y=float(obj["topY"]),
                bottom_x=float(obj["bottomX"]),
                bottom_y=float(obj["bottomY"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidBox(f"malformed box object: {obj!r}") from exc
        return box.validate()


@dataclass(frozen=True)
class Detection:
    """A scored, labeled box as returned by a detector backend."""

    box: BoundingBox
    label: str
    score: float

    def validate(self) -> "Detection":
        self.box.validate()
        if not (0.0 <= self.score <= 1.0):
            raise InvalidBox(f"score out of [0, 1]: {self.score}")
        return self

    def to_json(self) -> dict[str, Any]:
        return {"box": self.box.to_json(), "label": self.label, "score": self.score}

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "Detection":
        try:
            det = cls(
                box=BoundingBox.from_json(obj["box"]),
                label=str(obj["label"]),
                score=float(obj["score"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidBox(f"malformed detection object: {obj!r}") from exc
        return det.validate()


def detections_to_json(filename: str, detections: list[Detection]) -> dict[str, Any]:
    """Canonical detection document: {"filename": ..., "boxes": [...]}."""
    return {"filename": filename, "boxes": [d.to_json() for d in detections]}


def detections_from_json(obj: dict[str, Any]) -> tuple[str, list[Detection]]:
    filename = str(obj.get("filename", ""))
    boxes = obj.get("boxes")
    if not isinstance(boxes, list):
        raise InvalidBox("detection document missing 'boxes' array")
    return filename, [Detection.from_json(b) for b in boxes]

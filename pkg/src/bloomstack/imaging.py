"""Image preprocessing and output rendering.

All operations are pure functions over owned numpy buffers (H, W, 3)
uint8 RGB, so any number of pipeline runs can call them concurrently.
Pillow is used only for JPEG/PNG codec work; drawing is done with direct
pixel writes so rendering never serializes on a shared drawing library.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np
from PIL import Image, UnidentifiedImageError

from .boxes import Detection

DEFAULT_COMPRESS_QUALITY = 30
RENDER_ENCODE_QUALITY = 90

_ACCEPTED_FORMATS = {"JPEG", "PNG"}


class DecodeError(ValueError):
    """Input bytes are not a decodable JPEG or PNG image."""


class EncodeError(RuntimeError):
    """JPEG encoding failed."""


class BadSliceCount(ValueError):
    """Slice count k must satisfy 1 <= k <= image width."""


def decode_image(data: bytes) -> np.ndarray:
    """Decode JPEG or PNG bytes into an (H, W, 3) uint8 RGB array."""
    try:
        with Image.open(io.BytesIO(data)) as img:
            if img.format not in _ACCEPTED_FORMATS:
                raise DecodeError(f"unsupported format: {img.format}")
            rgb = img.convert("RGB")
            arr = np.asarray(rgb, dtype=np.uint8)
    except DecodeError:
        raise
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise DecodeError(f"cannot decode image: {exc}") from exc
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise DecodeError(f"unexpected decoded shape: {arr.shape}")
    return arr


def encode_jpeg(image: np.ndarray, quality: int = RENDER_ENCODE_QUALITY) -> bytes:
    if not 1 <= quality <= 100:
        raise EncodeError(f"quality must be in 1..100, got {quality}")
    _check_image(image)
    buf = io.BytesIO()
    try:
        Image.fromarray(image, mode="RGB").save(buf, format="JPEG", quality=quality)
    except OSError as exc:
        raise EncodeError(f"jpeg encode failed: {exc}") from exc
    return buf.getvalue()


def compress_jpeg(data: bytes, quality: int = DEFAULT_COMPRESS_QUALITY) -> bytes:
    """Recompress JPEG/PNG bytes as JPEG at the given quality.

    Decoded dimensions are preserved exactly; only the encoding changes.
    """
    return encode_jpeg(decode_image(data), quality=quality)


def slice_vertical(image: np.ndarray, k: int) -> list[np.ndarray]:
    """Split an image into k full-height vertical slices.

    The first k-1 slices have width floor(W/k); the last slice takes the
    remainder, so concatenating the slices left-to-right reproduces the
    original pixels exactly.
    """
    _check_image(image)
    width = image.shape[1]
    if k < 1 or width < k:
        raise BadSliceCount(f"k={k} invalid for width {width}")
    base = width // k
    slices = []
    for i in range(k):
        left = i * base
        right = left + base if i < k - 1 else width
        slices.append(np.ascontiguousarray(image[:, left:right, :]))
    return slices


def concat_horizontal(slices: list[np.ndarray]) -> np.ndarray:
    for s in slices:
        _check_image(s)
    return np.concatenate(slices, axis=1)


@dataclass(frozen=True)
class DimCheck:
    ok: bool
    actual_w: int
    actual_h: int
    expected_w: int
    expected_h: int


def validate_dims(image: np.ndarray, expected_w: int, expected_h: int) -> DimCheck:
    """Pass iff the image is exactly expected_w x expected_h."""
    _check_image(image)
    h, w = image.shape[:2]
    return DimCheck(
        ok=(w == expected_w and h == expected_h),
        actual_w=w,
        actual_h=h,
        expected_w=expected_w,
        expected_h=expected_h,
    )


@dataclass(frozen=True)
class RenderStyle:
    thickness: int = 2
    color: tuple[int, int, int] = (255, 0, 0)
    label: bool = False


def render_boxes(
    image: np.ndarray,
    detections: list[Detection],
    style: RenderStyle = RenderStyle(),
) -> np.ndarray:
    """Draw rectangle outlines (and optional labels) onto a copy of the image.

    Corners are denormalized with round-half-up and clipped to the image;
    strokes grow inward from the outline so a thickness-1 box touches
    exactly the outline rows/columns. The input buffer is never mutated.
    """
    _check_image(image)
    for det in detections:
        det.validate()
    out = image.copy()
    h, w = out.shape[:2]
    color = np.array(style.color, dtype=np.uint8)
    t = max(1, style.thickness)
    for det in detections:
        x0 = _round_half_up(det.box.top_x * w)
        x1 = _round_half_up(det.box.bottom_x * w)
        y0 = _round_half_up(det.box.top_y * h)
        y1 = _round_half_up(det.box.bottom_y * h)
        x0c, x1c = max(0, x0), min(w - 1, x1)
        y0c, y1c = max(0, y0), min(h - 1, y1)
        if x0c > x1c or y0c > y1c:
            continue
        # Horizontal strokes (top, bottom), then vertical (left, right).
        out[_clip_span(y0, y0 + t - 1, h), x0c : x1c + 1] = color
        out[_clip_span(y1 - t + 1, y1, h), x0c : x1c + 1] = color
        out[y0c : y1c + 1, _clip_span(x0, x0 + t - 1, w)] = color
        out[y0c : y1c + 1, _clip_span(x1 - t + 1, x1, w)] = color
        if style.label:
            text = f"{det.label} {det.score:.2f}"
            _draw_text(out, text, x=x0c, y=y0 - _GLYPH_H - 2, color=color)
    return out


def _round_half_up(v: float) -> int:
    return math.floor(v + 0.5)


def _clip_span(lo: int, hi: int, limit: int) -> slice:
    lo = max(0, lo)
    hi = min(limit - 1, hi)
    if lo > hi:
        return slice(0, 0)
    return slice(lo, hi + 1)


# Minimal 3x5 bitmap font for box labels; 'X' marks set pixels.
_GLYPH_W, _GLYPH_H = 3, 5
_GLYPHS: dict[str, tuple[str, ...]] = {
    "0": ("XXX", "X.X", "X.X", "X.X", "XXX"),
    "1": (".X.", "XX.", ".X.", ".X.", "XXX"),
    "2": ("XXX", "..X", "XXX", "X..", "XXX"),
    "3": ("XXX", "..X", ".XX", "..X", "XXX"),
    "4": ("X.X", "X.X", "XXX", "..X", "..X"),
    "5": ("XXX", "X..", "XXX", "..X", "XXX"),
    "6": ("XXX", "X..", "XXX", "X.X", "XXX"),
    "7": ("XXX", "..X", "..X", "..X", "..X"),
    "8": ("XXX", "X.X", "XXX", "X.X", "XXX"),
    "9": ("XXX", "X.X", "XXX", "..X", "XXX"),
    "a": (".XX", "X.X", "XXX", "X.X", "X.X"),
    "b": ("XX.", "X.X", "XX.", "X.X", "XX."),
    "c": (".XX", "X..", "X..", "X..", ".XX"),
    "d": ("XX.", "X.X", "X.X", "X.X", "XX."),
    "e": ("XXX", "X..", "XX.", "X..", "XXX"),
    "f": ("XXX", "X..", "XX.", "X..", "X.."),
    "g": (".XX", "X..", "X.X", "X.X", ".XX"),
    "h": ("X.X", "X.X", "XXX", "X.X", "X.X"),
    "i": ("XXX", ".X.", ".X.", ".X.", "XXX"),
    "j": ("..X", "..X", "..X", "X.X", ".X."),
    "k": ("X.X", "XX.", "X..", "XX.", "X.X"),
    "l": ("X..", "X..", "X..", "X..", "XXX"),
    "m": ("X.X", "XXX", "X.X", "X.X", "X.X"),
    "n": ("XX.", "X.X", "X.X", "X.X", "X.X"),
    "o": ("XXX", "X.X", "X.X", "X.X", "XXX"),
    "p": ("XXX", "X.X", "XXX", "X..", "X.."),
    "q": ("XXX", "X.X", "X.X", "XXX", "..X"),
    "r": ("XXX", "X.X", "XX.", "X.X", "X.X"),
    "s": (".XX", "X..", ".X.", "..X", "XX."),
    "t": ("XXX", ".X.", ".X.", ".X.", ".X."),
    "u": ("X.X", "X.X", "X.X", "X.X", "XXX"),
    "v": ("X.X", "X.X", "X.X", "X.X", ".X."),
    "w": ("X.X", "X.X", "X.X", "XXX", "X.X"),
    "x": ("X.X", "X.X", ".X.", "X.X", "X.X"),
    "y": ("X.X", "X.X", ".X.", ".X.", ".X."),
    "z": ("XXX", "..X", ".X.", "X..", "XXX"),
    ".": ("...", "...", "...", "...", ".X."),
    ":": ("...", ".X.", "...", ".X.", "..."),
    "%": ("X.X", "..X", ".X.", "X..", "X.X"),
    " ": ("...", "...", "...", "...", "..."),
}
_UNKNOWN_GLYPH = ("XXX", "X.X", "X.X", "X.X", "XXX")


def _draw_text(out: np.ndarray, text: str, x: int, y: int, color: np.ndarray) -> None:
    h, w = out.shape[:2]
    cx = x
    for ch in text.lower():
        glyph = _GLYPHS.get(ch, _UNKNOWN_GLYPH)
        for gy, row in enumerate(glyph):
            py = y + gy
            if not 0 <= py < h:
                continue
            for gx, cell in enumerate(row):
                px = cx + gx
                if cell == "X" and 0 <= px < w:
                    out[py, px] = color
        cx += _GLYPH_W + 1


def _check_image(image: np.ndarray) -> None:
    if not isinstance(image, np.ndarray) or image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) array, got {getattr(image, 'shape', None)}")
    if image.dtype != np.uint8:
        raise ValueError(f"expected uint8 pixels, got {image.dtype}")
    if image.shape[0] < 1 or image.shape[1] < 1:
        raise ValueError("empty image")

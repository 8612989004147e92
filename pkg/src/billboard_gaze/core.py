"""Geometric primitives, the gaze label space, and coordinate transforms.

Everything in this module is an immutable value or a pure function, so all
of it is safe to use concurrently.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass


class GazeClass(enum.IntEnum):
    """Three-level driver gaze duration label, ordinal None < Medium < Long."""

    NONE = 0
    MEDIUM = 1
    LONG = 2


GAZE_CLASS_NAMES = ("none", "medium", "long")


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in pixel coordinates, origin top-left."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if self.x2 < self.x1 or self.y2 < self.y1:
            raise ValueError(f"inverted box: {self}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    def area(self) -> float:
        return self.width * self.height

    def clamp(self, img_w: float, img_h: float) -> "BBox":
        """Clip the box to the image rectangle [0, img_w] x [0, img_h]."""
        x1 = min(max(self.x1, 0.0), img_w)
        y1 = min(max(self.y1, 0.0), img_h)
        x2 = min(max(self.x2, 0.0), img_w)
        y2 = min(max(self.y2, 0.0), img_h)
        return BBox(x1, y1, x2, y2)


@dataclass(frozen=True)
class NormBBox:
    """Center-form box as fractions of image width/height.

    This is the 4-d bounding-box feature family fed to the classifier:
    (cx, cy, w, h), all dimensionless in [0, 1].
    """

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not (0.0 <= self.cx <= 1.0 and 0.0 <= self.cy <= 1.0):
            raise ValueError(f"center outside [0,1]: {self}")
        if not (0.0 < self.w <= 1.0 and 0.0 < self.h <= 1.0):
            raise ValueError(f"size outside (0,1]: {self}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.cx, self.cy, self.w, self.h)


@dataclass(frozen=True)
class Detection:
    """A single detector output: box, confidence, class id (billboard = 0)."""

    box: BBox
    score: float
    class_id: int = 0

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score outside [0,1]: {self.score}")


@dataclass(frozen=True)
class LetterboxTransform:
    """Aspect-preserving resize plus symmetric padding into a fixed frame.

    Maps source-image pixels into the padded destination frame via
    x' = x * scale + pad_x (same for y).
    """

    scale: float
    pad_x: float
    pad_y: float
    src_w: int
    src_h: int
    dst_w: int
    dst_h: int

    @classmethod
    def fit(cls, src_w: int, src_h: int, dst_w: int, dst_h: int) -> "LetterboxTransform":
        if src_w <= 0 or src_h <= 0 or dst_w <= 0 or dst_h <= 0:
            raise ValueError("image dimensions must be positive")
        scale = min(dst_w / src_w, dst_h / src_h)
        pad_x = (dst_w - scale * src_w) / 2.0
        pad_y = (dst_h - scale * src_h) / 2.0
        return cls(scale, pad_x, pad_y, src_w, src_h, dst_w, dst_h)


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes; 0 when the union is empty."""
    ix1 = max(a.x1, b.x1)
    iy1 = max(a.y1, b.y1)
    ix2 = min(a.x2, b.x2)
    iy2 = min(a.y2, b.y2)
    iw = max(0.0, ix2 - ix1)
    ih = max(0.0, iy2 - iy1)
    inter = iw * ih
    union = a.area() + b.area() - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def to_norm(box: BBox, img_w: float, img_h: float) -> NormBBox:
    """Convert a pixel box to normalized center form, clamping to the image first.

    Raises ValueError for a box that is degenerate (zero area) after clamping.
    """
    if img_w <= 0 or img_h <= 0:
        raise ValueError("image dimensions must be positive")
    c = box.clamp(img_w, img_h)
    if c.width <= 0.0 or c.height <= 0.0:
        raise ValueError("degenerate box")
    return NormBBox(
        cx=(c.x1 + c.x2) / (2.0 * img_w),
        cy=(c.y1 + c.y2) / (2.0 * img_h),
        w=c.width / img_w,
        h=c.height / img_h,
    )


def from_norm(nb: NormBBox, img_w: float, img_h: float) -> BBox:
    """Inverse of to_norm for a fixed image size."""
    if img_w <= 0 or img_h <= 0:
        raise ValueError("image dimensions must be positive")
    return BBox(
        x1=(nb.cx - nb.w / 2.0) * img_w,
        y1=(nb.cy - nb.h / 2.0) * img_h,
        x2=(nb.cx + nb.w / 2.0) * img_w,
        y2=(nb.cy + nb.h / 2.0) * img_h,
    )


def letterbox_map(t: LetterboxTransform, box: BBox) -> BBox:
    """Source-space box -> padded destination-space box."""
    return BBox(
        x1=box.x1 * t.scale + t.pad_x,
        y1=box.y1 * t.scale + t.pad_y,
        x2=box.x2 * t.scale + t.pad_x,
        y2=box.y2 * t.scale + t.pad_y,
    )


def letterbox_unmap(t: LetterboxTransform, box: BBox) -> BBox:
    """Padded destination-space box -> source-space box (exact inverse of map)."""
    return BBox(
        x1=(box.x1 - t.pad_x) / t.scale,
        y1=(box.y1 - t.pad_y) / t.scale,
        x2=(box.x2 - t.pad_x) / t.scale,
        y2=(box.y2 - t.pad_y) / t.scale,
    )

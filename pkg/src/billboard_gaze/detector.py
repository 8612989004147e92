"""Single-image billboard detection: letterbox preprocessing, anchor-free head
decoding, confidence filtering, greedy NMS, and un-mapping back to source pixels.

The detector graph itself is a consumed asset (see backend); this module owns
everything around the raw head output.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .backend import ModelHandle, forward
from .core import BBox, Detection, LetterboxTransform, letterbox_unmap

PAD_GRAY = 114


@dataclass(frozen=True)
class DetectorConfig:
    input_size: int = 640
    conf_threshold: float = 0.25
    nms_iou_threshold: float = 0.70
    max_detections: int = 300

    def __post_init__(self):
        if self.input_size <= 0 or self.input_size % 32 != 0:
            raise ValueError("input_size must be a positive multiple of 32")
        if not (0.0 <= self.conf_threshold <= 1.0):
            raise ValueError("conf_threshold outside [0,1]")
        if not (0.0 <= self.nms_iou_threshold <= 1.0):
            raise ValueError("nms_iou_threshold outside [0,1]")
        if self.max_detections < 1:
            raise ValueError("max_detections must be >= 1")


def preprocess(image: np.ndarray, cfg: DetectorConfig) -> tuple[np.ndarray, LetterboxTransform]:
    """Letterbox an HxWx3 u8 RGB image into a (1,3,S,S) f32 tensor in [0,1].

    Aspect-preserving bilinear resize, gray padding (114), channel-first.
    """
    if image.ndim != 3 or image.shape[2] != 3 or image.size == 0:
        raise ValueError("expected a non-empty HxWx3 image")
    src_h, src_w = image.shape[:2]
    size = cfg.input_size
    t = LetterboxTransform.fit(src_w, src_h, size, size)
    new_w = int(round(src_w * t.scale))
    new_h = int(round(src_h * t.scale))
    if (new_w, new_h) != (src_w, src_h):
        resized = cv2.resize(image, (new_w, new_h), interpolation=cv2.INTER_LINEAR)
    else:
        resized = image
    canvas = np.full((size, size, 3), PAD_GRAY, dtype=np.uint8)
    top = int(round(t.pad_y))
    left = int(round(t.pad_x))
    canvas[top : top + new_h, left : left + new_w] = resized
    tensor = canvas.astype(np.float32) / 255.0
    return tensor.transpose(2, 0, 1)[np.newaxis], t


def decode(raw: np.ndarray, t: LetterboxTransform, cfg: DetectorConfig) -> list[Detection]:
    """Turn a (1, 4+1, A) head output into source-pixel Detections.

    Anchors scoring >= conf_threshold are converted cxcywh -> corners,
    un-mapped through the letterbox transform, clamped to the image, and
    boxes degenerate after clamping are dropped. Output keeps anchor order.
    """
    if raw.ndim != 3 or raw.shape[0] != 1 or raw.shape[1] != 5:
        raise ValueError(f"raw head output must have shape (1, 5, A), got {raw.shape}")
    scores = raw[0, 4, :]
    keep = scores >= cfg.conf_threshold
    if not np.any(keep):
        return []
    cx, cy, w, h = (raw[0, i, keep].astype(np.float64) for i in range(4))
    kept_scores = scores[keep].astype(np.float64)
    dets: list[Detection] = []
    for i in range(cx.shape[0]):
        box = BBox(cx[i] - w[i] / 2, cy[i] - h[i] / 2, cx[i] + w[i] / 2, cy[i] + h[i] / 2)
        src = letterbox_unmap(t, box).clamp(t.src_w, t.src_h)
        if src.area() <= 0.0:
            continue
        dets.append(Detection(src, float(min(max(kept_scores[i], 0.0), 1.0))))
    return dets


def nms(
    dets: list[Detection],
    iou_threshold: float,
    max_detections: int | None = None,
) -> list[Detection]:
    """Greedy non-maximum suppression.

    Candidates in (score desc, x1 asc, y1 asc) order; a detection is kept iff
    its IoU with every already-kept detection is strictly below the threshold.
    Output is score-descending, truncated to max_detections when given.
    """
    if not dets:
        return []
    order = sorted(dets, key=lambda d: (-d.score, d.box.x1, d.box.y1))
    boxes = np.array([[d.box.x1, d.box.y1, d.box.x2, d.box.y2] for d in order])
    areas = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
    kept_idx: list[int] = []
    for i in range(len(order)):
        if max_detections is not None and len(kept_idx) >= max_detections:
            break
        if kept_idx:
            kb = boxes[kept_idx]
            ix1 = np.maximum(kb[:, 0], boxes[i, 0])
            iy1 = np.maximum(kb[:, 1], boxes[i, 1])
            ix2 = np.minimum(kb[:, 2], boxes[i, 2])
            iy2 = np.minimum(kb[:, 3], boxes[i, 3])
            inter = np.clip(ix2 - ix1, 0.0, None) * np.clip(iy2 - iy1, 0.0, None)
            union = areas[kept_idx] + areas[i] - inter
            ious = np.where(union > 0.0, inter / np.where(union > 0.0, union, 1.0), 0.0)
            if np.any(ious >= iou_threshold):
                continue
        kept_idx.append(i)
    return [order[i] for i in kept_idx]


def detect(image: np.ndarray, model: ModelHandle, cfg: DetectorConfig) -> list[Detection]:
    """Full single-image inference: preprocess, forward, decode, NMS.

    Deterministic for a fixed model, image, and config.
    """
    expected = (1, 3, cfg.input_size, cfg.input_size)
    in_spec = model.input_specs[0]
    if not in_spec.conforms(expected):
        raise ValueError(f"model input spec {in_spec.shape} does not accept {expected}")
    tensor, t = preprocess(image, cfg)
    outputs = forward(model, {in_spec.name: tensor})
    raw = outputs[model.output_specs[0].name]
    return nms(decode(raw, t, cfg), cfg.nms_iou_threshold, cfg.max_detections)


# --- detections.csv ----------------------------------------------------------

DETECTIONS_HEADER = ["image", "det_id", "x1", "y1", "x2", "y2", "score"]


def write_detections_csv(path: str | Path, per_image: dict[str, list[Detection]]) -> None:
    """Write detections with the fixed header; floats at 6 decimals."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(DETECTIONS_HEADER)
        for image in per_image:
            for det_id, d in enumerate(per_image[image]):
                writer.writerow(
                    [
                        image,
                        det_id,
                        f"{d.box.x1:.6f}",
                        f"{d.box.y1:.6f}",
                        f"{d.box.x2:.6f}",
                        f"{d.box.y2:.6f}",
                        f"{d.score:.6f}",
                    ]
                )


def read_detections_csv(path: str | Path) -> dict[str, list[Detection]]:
    """Read a detections.csv back into per-image lists ordered by det_id."""
    per_image: dict[str, list[tuple[int, Detection]]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != DETECTIONS_HEADER:
            raise ValueError(f"unexpected detections.csv header: {header}")
        for row in reader:
            image, det_id = row[0], int(row[1])
            x1, y1, x2, y2, score = map(float, row[2:7])
            per_image.setdefault(image, []).append((det_id, Detection(BBox(x1, y1, x2, y2), score)))
    return {
        image: [d for _, d in sorted(items, key=lambda p: p[0])]
        for image, items in per_image.items()
    }

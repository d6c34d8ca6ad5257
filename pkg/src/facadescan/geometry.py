"""Box algebra shared by every pipeline stage: IoU and greedy NMS.

Two box flavors exist with the same algebra:

* :class:`PixelBox` lives in image coordinates. x grows right, y grows
  DOWN (row index), so ``y`` is the top edge and ``y + h`` the bottom.
* :class:`PlaneBox` lives in metric facade-plane coordinates. x grows
  right, y grows UP from the facade/ground intersection line, so ``y_m``
  is the bottom edge and ``y_m + h_m`` the top.

IoU and NMS only need the axis-aligned extents ``(x0, x1, y0, y1)``,
which both types expose via ``extents()``; the down/up convention never
leaks into the overlap arithmetic.

NMS is greedy and score-ordered: repeatedly keep the highest-scoring
remaining box and suppress every remaining box whose IoU with it is
STRICTLY greater than the threshold. Ties in score break by (smaller y0,
then smaller x0) so the result is independent of input order. Survivors
therefore have pairwise IoU <= threshold, and the operation is
idempotent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidBoxError

__all__ = ["PixelBox", "PlaneBox", "iou", "nms"]


@dataclass(frozen=True)
class PixelBox:
    """Axis-aligned window box in image coordinates with a confidence score.

    Coordinates are real-valued, not integer: template matches and
    jittered annotations land between pixels and must not be quantized.
    """

    x: float
    y: float
    w: float
    h: float
    score: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise InvalidBoxError(f"non-finite position ({self.x}, {self.y})")
        if not (self.w > 0 and self.h > 0 and math.isfinite(self.w) and math.isfinite(self.h)):
            raise InvalidBoxError(f"non-positive box size {self.w} x {self.h}")
        if not (0.0 <= self.score <= 1.0):
            raise InvalidBoxError(f"score {self.score} outside [0, 1]")

    @property
    def area(self) -> float:
        return self.w * self.h

    def extents(self) -> tuple[float, float, float, float]:
        """(x0, x1, y0, y1) with y in image-down convention."""
        return (self.x, self.x + self.w, self.y, self.y + self.h)


# Boxes may dip below the ground line by at most this much before the
# invariant "not fully underground" trips; covers projection jitter.
_GROUND_TOL = 1e-6


@dataclass(frozen=True)
class PlaneBox:
    """Window box mapped onto the global vertical facade plane.

    ``y_m`` is the METRIC height of the bottom edge above the line where
    the facade meets the ground (up-positive). ``source_frames`` records
    which frames contributed observations of this window; plane-level
    dedup unions them so provenance survives suppression.
    """

    x_m: float
    y_m: float
    w_m: float
    h_m: float
    score: float
    source_frames: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if not (math.isfinite(self.x_m) and math.isfinite(self.y_m)):
            raise InvalidBoxError(f"non-finite position ({self.x_m}, {self.y_m})")
        if not (self.w_m > 0 and self.h_m > 0 and math.isfinite(self.w_m) and math.isfinite(self.h_m)):
            raise InvalidBoxError(f"non-positive box size {self.w_m} x {self.h_m}")
        if not (0.0 <= self.score <= 1.0):
            raise InvalidBoxError(f"score {self.score} outside [0, 1]")
        if self.y_m + self.h_m < -_GROUND_TOL:
            raise InvalidBoxError(
                f"box top {self.y_m + self.h_m:.6f} m lies below the ground line"
            )

    @property
    def area(self) -> float:
        return self.w_m * self.h_m

    def extents(self) -> tuple[float, float, float, float]:
        """(x0, x1, y0, y1) with y in metric up convention."""
        return (self.x_m, self.x_m + self.w_m, self.y_m, self.y_m + self.h_m)


def iou(b1, b2) -> float:
    """Intersection area over union area of two axis-aligned boxes.

    Symmetric; 0 for disjoint boxes; exactly 1 for identical boxes.
    Works on anything exposing ``extents()`` (PixelBox and PlaneBox).
    """
    ax0, ax1, ay0, ay1 = b1.extents()
    bx0, bx1, by0, by1 = b2.extents()
    if ax1 <= ax0 or ay1 <= ay0 or bx1 <= bx0 or by1 <= by0:
        raise InvalidBoxError("iou requires boxes with positive area")
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    if ax0 == bx0 and ax1 == bx1 and ay0 == by0 and ay1 == by1:
        return 1.0
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return inter / union


def _extent_arrays(boxes) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    x0 = np.empty(len(boxes))
    x1 = np.empty(len(boxes))
    y0 = np.empty(len(boxes))
    y1 = np.empty(len(boxes))
    scores = np.empty(len(boxes))
    for i, b in enumerate(boxes):
        x0[i], x1[i], y0[i], y1[i] = b.extents()
        scores[i] = b.score
    return x0, x1, y0, y1, scores


def _iou_one_vs_many(i: int, idx: np.ndarray, x0, x1, y0, y1) -> np.ndarray:
    iw = np.minimum(x1[i], x1[idx]) - np.maximum(x0[i], x0[idx])
    ih = np.minimum(y1[i], y1[idx]) - np.maximum(y0[i], y0[idx])
    inter = np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)
    area_i = (x1[i] - x0[i]) * (y1[i] - y0[i])
    areas = (x1[idx] - x0[idx]) * (y1[idx] - y0[idx])
    union = area_i + areas - inter
    out = np.where(inter > 0.0, inter / union, 0.0)
    # Exact-duplicate extents must compare as IoU 1.0 regardless of roundoff.
    same = (x0[idx] == x0[i]) & (x1[idx] == x1[i]) & (y0[idx] == y0[i]) & (y1[idx] == y1[i])
    return np.where(same, 1.0, out)


def nms(boxes, iou_threshold: float):
    """Greedy score-ordered non-maximum suppression.

    Returns the kept subset of ``boxes`` in descending score order
    (ties: smaller y0, then smaller x0, then the remaining extent so the
    ordering is total and the result does not depend on input order). A
    box is suppressed when its IoU with an already-kept box exceeds
    ``iou_threshold`` strictly.
    """
    if not (0.0 <= iou_threshold <= 1.0):
        raise ValueError(f"iou_threshold {iou_threshold} outside [0, 1]")
    boxes = list(boxes)
    if not boxes:
        return []
    x0, x1, y0, y1, scores = _extent_arrays(boxes)
    if np.any((x1 - x0) <= 0.0) or np.any((y1 - y0) <= 0.0):
        raise InvalidBoxError("nms requires boxes with positive area")
    # lexsort: last key is primary
    order = np.lexsort((y1, x1, x0, y0, -scores))
    alive = np.ones(len(boxes), dtype=bool)
    keep: list[int] = []
    for pos, i in enumerate(order):
        if not alive[pos]:
            continue
        keep.append(int(i))
        rest_pos = np.arange(pos + 1, len(order))
        rest_pos = rest_pos[alive[pos + 1:]]
        if rest_pos.size == 0:
            continue
        rest_idx = order[rest_pos]
        overl = _iou_one_vs_many(int(i), rest_idx, x0, x1, y0, y1)
        alive[rest_pos[overl > iou_threshold]] = False
    return [boxes[i] for i in keep]

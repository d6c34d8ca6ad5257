"""Projection of per-frame detections onto one global facade plane.

The facade is modeled as a vertical plane at constant horizontal
distance D from the camera, surveyed by a purely vertical flight. A
pixel row y in a frame taken at altitude H maps to facade height

    Y = (h/2 - y) * D/f + (-D * tan(beta_rel)) + H

where beta_rel is the frame's pitch relative to the first frame of the
sequence. The pitch term is a metric offset added after the D/f
scaling of the pixel offset; folding it in before the scaling as a
pixel offset of -f*tan(beta_rel) gives the identical Y, so both
readings share this one code path. Heights are measured from the line
where the facade meets the ground plane.

Horizontal coordinates use the same pinhole scaling applied sideways,
x_m = (x - width_px/2) * D/f, so areas come out in square meters. A
fidelity mode (MappingContext.pixel_x) keeps X in raw pixels instead;
counts are unaffected because the flight has no lateral motion and D
is constant, only the reported extent and area change units.

Once every box lives on the plane, duplicates from overlapping frames
collapse via NMS, storeys come from a bottom-up sweep over vertical
intervals, and the window-to-facade area ratio divides the summed box
areas by a facade extent (auto-fitted or user-supplied).
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .errors import ExtentError, InvalidPitchError
from .geometry import PixelBox, PlaneBox, _extent_arrays, _iou_one_vs_many
from .ingest import CameraModel, Pose

__all__ = [
    "MappingContext",
    "Extent",
    "FacadeMetrics",
    "StoreyResult",
    "pitch_correction",
    "project_point",
    "project_box",
    "dedup_plane",
    "count_storeys",
    "auto_extent",
    "area_ratio",
    "metrics_to_json",
]


@dataclass(frozen=True)
class MappingContext:
    """Per-sequence constants for the pixel-to-plane mapping.

    beta0_rad is the pitch of the first frame; every projection uses
    the pitch relative to it. pixel_x keeps horizontal coordinates in
    raw pixels instead of meters.
    """

    depth_m: float
    camera: CameraModel
    beta0_rad: float
    pixel_x: bool = False

    def __post_init__(self):
        if not (self.depth_m > 0 and math.isfinite(self.depth_m)):
            raise ValueError(f"depth_m must be positive, got {self.depth_m}")
        if not math.isfinite(self.beta0_rad):
            raise ValueError("beta0_rad is not finite")


@dataclass(frozen=True)
class Extent:
    """Axis-aligned metric rectangle on the facade plane (y grows up)."""

    x_m: float
    y_m: float
    w_m: float
    h_m: float

    @property
    def area(self) -> float:
        return self.w_m * self.h_m


@dataclass(frozen=True)
class FacadeMetrics:
    """Global survey results for one facade."""

    window_count: int
    storey_count: int
    windows_per_storey: tuple[int, ...]
    area_ratio: float
    facade_extent: Extent

    def __post_init__(self):
        if self.window_count != sum(self.windows_per_storey):
            raise ValueError("window_count must equal sum(windows_per_storey)")
        if self.storey_count != len(self.windows_per_storey):
            raise ValueError("storey_count must equal len(windows_per_storey)")
        if not (0.0 <= self.area_ratio <= 1.0):
            raise ValueError(f"area_ratio {self.area_ratio} outside [0, 1]")


def pitch_correction(depth_m: float, beta_rel_rad: float) -> float:
    """Metric vertical offset -D * tan(beta_rel) caused by camera pitch."""
    if abs(beta_rel_rad) >= math.pi / 2:
        raise InvalidPitchError(
            f"relative pitch {beta_rel_rad} rad is at or beyond +-pi/2; "
            "the facade is out of view"
        )
    return -depth_m * math.tan(beta_rel_rad)


def project_point(y_px: float, pose: Pose, ctx: MappingContext) -> float:
    """Facade height (meters above the ground line) of one pixel row."""
    beta_rel = pose.pitch_rad - ctx.beta0_rad
    scale = ctx.depth_m / ctx.camera.focal_px
    return ((ctx.camera.height_px / 2.0 - y_px) * scale
            + pitch_correction(ctx.depth_m, beta_rel)
            + pose.altitude_m)


def project_box(box: PixelBox, pose: Pose, ctx: MappingContext,
                frame_id: str | None = None) -> PlaneBox:
    """Map a detection box into plane coordinates.

    The box's top image row maps to the larger facade height. With
    frame_id given, the result carries it as provenance.
    """
    y_top = project_point(box.y, pose, ctx)
    y_bot = project_point(box.y + box.h, pose, ctx)
    if ctx.pixel_x:
        x_m, w_m = box.x, box.w
    else:
        scale = ctx.depth_m / ctx.camera.focal_px
        x_m = (box.x - ctx.camera.width_px / 2.0) * scale
        w_m = box.w * scale
    return PlaneBox(
        x_m=x_m, y_m=y_bot, w_m=w_m, h_m=y_top - y_bot,
        score=box.score,
        source_frames=(frame_id,) if frame_id is not None else (),
    )


def dedup_plane(boxes: list[PlaneBox], iou_threshold: float = 0.3) -> list[PlaneBox]:
    """Collapse repeated sightings of the same window across frames.

    Greedy NMS in descending score order; among equal scores the larger
    box wins (a sighting clipped at a frame edge loses to a full one),
    then lower bottom edge, then left edge, so the survivor set never
    depends on frame processing order. Each survivor's source_frames
    becomes the sorted union over itself and every box it absorbed.
    """
    if not (0.0 <= iou_threshold <= 1.0):
        raise ValueError(f"iou_threshold must be in [0, 1], got {iou_threshold}")
    boxes = list(boxes)
    if not boxes:
        return []
    x0, x1, y0, y1, scores = _extent_arrays(boxes)
    areas = (x1 - x0) * (y1 - y0)
    order = np.lexsort((x1, x0, y0, -areas, -scores))
    alive = np.ones(len(boxes), dtype=bool)
    out: list[PlaneBox] = []
    for pos, i in enumerate(order):
        if not alive[pos]:
            continue
        frames = set(boxes[i].source_frames)
        rest_pos = np.arange(pos + 1, len(order))
        rest_pos = rest_pos[alive[pos + 1:]]
        if rest_pos.size:
            rest_idx = order[rest_pos]
            overl = _iou_one_vs_many(int(i), rest_idx, x0, x1, y0, y1)
            drop = overl > iou_threshold
            alive[rest_pos[drop]] = False
            for j in rest_idx[drop]:
                frames.update(boxes[int(j)].source_frames)
        out.append(replace(boxes[int(i)], source_frames=tuple(sorted(frames))))
    return out


@dataclass(frozen=True)
class StoreyResult:
    storey_count: int
    windows_per_storey: tuple[int, ...]
    storey_bands: tuple[tuple[float, float], ...]


def count_storeys(unique: list[PlaneBox], band_overlap_min: float = 0.5) -> StoreyResult:
    """Group unique windows into storeys by a bottom-up vertical sweep.

    Boxes are visited by ascending bottom edge. A box joins the open
    storey when its vertical interval overlaps the storey's band by at
    least band_overlap_min of the shorter of the two intervals;
    otherwise the band closes and a new storey opens above it. Returns
    counts and merged bands bottom-up.
    """
    if not (0.0 < band_overlap_min <= 1.0):
        raise ValueError(f"band_overlap_min must be in (0, 1], got {band_overlap_min}")
    if not unique:
        return StoreyResult(0, (), ())
    spans = sorted(((b.y_m, b.y_m + b.h_m, b.x_m) for b in unique))
    counts: list[int] = []
    bands: list[tuple[float, float]] = []
    band_lo, band_hi = spans[0][0], spans[0][1]
    n = 1
    for lo, hi, _ in spans[1:]:
        overlap = min(band_hi, hi) - max(band_lo, lo)
        shorter = min(band_hi - band_lo, hi - lo)
        if overlap >= band_overlap_min * shorter:
            band_hi = max(band_hi, hi)
            band_lo = min(band_lo, lo)
            n += 1
        else:
            counts.append(n)
            bands.append((band_lo, band_hi))
            band_lo, band_hi, n = lo, hi, 1
    counts.append(n)
    bands.append((band_lo, band_hi))
    return StoreyResult(len(counts), tuple(counts), tuple(bands))


def _content_bounds(boxes: list[PlaneBox]) -> tuple[float, float, float, float]:
    xs0, xs1, ys0, ys1 = zip(*(b.extents() for b in boxes))
    return min(xs0), min(ys0), max(xs1), max(ys1)


def auto_extent(unique: list[PlaneBox], wall_margin: float = 0.5) -> Extent:
    """Facade extent inferred from content: box hull plus wall margin.

    The margin is applied on all four sides; nothing is clamped to the
    ground line, so a rigid vertical shift of all boxes shifts the
    extent with them and leaves the area ratio unchanged.
    """
    if not unique:
        raise ExtentError("cannot infer a facade extent from zero windows")
    if wall_margin < 0:
        raise ValueError(f"wall_margin must be >= 0, got {wall_margin}")
    x0, y0, x1, y1 = _content_bounds(unique)
    return Extent(
        x_m=x0 - wall_margin,
        y_m=y0 - wall_margin,
        w_m=(x1 - x0) + 2 * wall_margin,
        h_m=(y1 - y0) + 2 * wall_margin,
    )


def area_ratio(unique: list[PlaneBox], extent: Extent) -> float:
    """Fraction of the facade extent covered by unique windows.

    Overlaps were already removed by dedup, so the numerator is a plain
    sum of box areas. A box sticking out of the extent only warns; a
    non-positive extent raises ExtentError.
    """
    if extent.w_m <= 0 or extent.h_m <= 0:
        raise ExtentError(
            f"facade extent {extent.w_m} x {extent.h_m} m has no area"
        )
    if unique:
        x0, y0, x1, y1 = _content_bounds(unique)
        tol = 1e-9
        if (x0 < extent.x_m - tol or y0 < extent.y_m - tol
                or x1 > extent.x_m + extent.w_m + tol
                or y1 > extent.y_m + extent.h_m + tol):
            warnings.warn(
                "facade extent does not cover all mapped windows; "
                "the area ratio numerator still counts them in full",
                RuntimeWarning, stacklevel=2,
            )
    return sum(b.area for b in unique) / extent.area


def metrics_to_json(metrics: FacadeMetrics, unique: list[PlaneBox],
                    storey_bands) -> str:
    """Serialize survey metrics to the output JSON document.

    Windows are listed bottom-up, left to right, for a stable diffable
    order regardless of dedup ordering.
    """
    windows = sorted(unique, key=lambda b: (b.y_m, b.x_m))
    doc = {
        "window_count": metrics.window_count,
        "storey_count": metrics.storey_count,
        "windows_per_storey": list(metrics.windows_per_storey),
        "area_ratio": metrics.area_ratio,
        "facade_extent": {"w_m": metrics.facade_extent.w_m,
                          "h_m": metrics.facade_extent.h_m},
        "storey_bands": [[lo, hi] for lo, hi in storey_bands],
        "unique_windows": [
            {"x_m": b.x_m, "y_m": b.y_m, "w_m": b.w_m, "h_m": b.h_m,
             "source_frames": list(b.source_frames)}
            for b in windows
        ],
    }
    return json.dumps(doc, indent=2) + "\n"

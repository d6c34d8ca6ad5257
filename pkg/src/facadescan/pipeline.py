"""End-to-end survey run: load, complete, map, measure, write.

The stages are the library modules in order. Loading goes through the
sequence config; each frame's pose comes from telemetry sync; each
frame's detections are completed by template matching (unless skipped);
every completed box is projected onto the facade plane; plane-level
dedup, storey sweep, and the area ratio produce the metrics; outputs
are a metrics JSON, a panorama SVG, and per-frame diagnostics.

Everything here is deterministic: identical inputs produce
byte-identical output files.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .geometry import PlaneBox, nms
from .ingest import (
    load_detections,
    load_image,
    load_sequence_config,
    parse_telemetry,
    sync_pose,
)
from .planemap import (
    Extent,
    FacadeMetrics,
    MappingContext,
    StoreyResult,
    area_ratio,
    auto_extent,
    count_storeys,
    dedup_plane,
    metrics_to_json,
    project_box,
)
from .postprocess import MatchParams, post_process_frame
from .report import render_report

__all__ = ["RunConfig", "FrameDiagnostics", "PipelineResult", "run_pipeline",
           "write_outputs", "summary_line"]

# Attitude angles the mapping silently ignores; beyond this they get a
# diagnostic warning because the plane model starts to bend the truth.
ATTITUDE_WARN_RAD = 0.05


@dataclass(frozen=True)
class RunConfig:
    """Everything a pipeline run needs besides the dataset itself."""

    config_path: Path
    out_dir: Path | None = None
    match: MatchParams = field(default_factory=MatchParams)
    dedup_iou: float = 0.3
    band_overlap_min: float = 0.5
    wall_margin_m: float = 0.5
    extent_w_m: float | None = None
    extent_h_m: float | None = None
    pixel_x: bool = False
    sync_mode: str = "linear"
    skip_postprocess: bool = False

    def __post_init__(self):
        if not (0.0 <= self.dedup_iou <= 1.0):
            raise ValueError(f"dedup_iou {self.dedup_iou} outside [0, 1]")
        if not (0.0 < self.band_overlap_min <= 1.0):
            raise ValueError(f"band_overlap_min {self.band_overlap_min} outside (0, 1]")
        if self.wall_margin_m < 0:
            raise ValueError("wall_margin_m must be >= 0")
        if (self.extent_w_m is None) != (self.extent_h_m is None):
            raise ValueError("extent_w_m and extent_h_m must be given together")
        if self.extent_w_m is not None and (self.extent_w_m <= 0 or self.extent_h_m <= 0):
            raise ValueError("user-supplied extent must have positive dimensions")
        if self.sync_mode not in ("linear", "nearest"):
            raise ValueError(f"sync_mode must be linear or nearest, got {self.sync_mode!r}")


@dataclass(frozen=True)
class FrameDiagnostics:
    frame: str
    originals: int
    candidates: int
    kept: int
    warnings: tuple[str, ...] = ()


@dataclass(frozen=True)
class PipelineResult:
    metrics: FacadeMetrics
    unique: tuple[PlaneBox, ...]
    storeys: StoreyResult
    diagnostics: tuple[FrameDiagnostics, ...]


def _user_extent(cfg: RunConfig, unique: list[PlaneBox]) -> Extent:
    """User-dimensioned extent, horizontally centered on the content.

    Vertically it stands on the ground line: the facade starts where
    the wall meets the ground, whatever height the windows sit at.
    """
    if unique:
        center = (min(b.x_m for b in unique)
                  + max(b.x_m + b.w_m for b in unique)) / 2.0
    else:
        center = 0.0
    return Extent(x_m=center - cfg.extent_w_m / 2.0, y_m=0.0,
                  w_m=cfg.extent_w_m, h_m=cfg.extent_h_m)


def run_pipeline(cfg: RunConfig) -> PipelineResult:
    """Run the whole survey pipeline for one sequence config."""
    meta, telemetry_path, detections_path = load_sequence_config(cfg.config_path)
    if not telemetry_path.is_file():
        raise ConfigError(f"telemetry file not found: {telemetry_path}")
    if not detections_path.is_file():
        raise ConfigError(f"detections file not found: {detections_path}")
    poses = parse_telemetry(telemetry_path.read_text(encoding="utf-8"))
    detections = load_detections(
        detections_path.read_text(encoding="utf-8"),
        camera=meta.camera,
        known_ids={f.id for f in meta.frames},
    )

    frame_poses = {f.id: sync_pose(f.t_s, poses, mode=cfg.sync_mode)
                   for f in meta.frames}
    first = meta.frames[0]
    ctx = MappingContext(depth_m=meta.depth_m, camera=meta.camera,
                         beta0_rad=frame_poses[first.id].pitch_rad,
                         pixel_x=cfg.pixel_x)

    plane_boxes: list[PlaneBox] = []
    diagnostics: list[FrameDiagnostics] = []
    for ref in meta.frames:
        pose = frame_poses[ref.id]
        boxes = detections.get(ref.id, [])
        notes: list[str] = []
        if abs(pose.roll_rad) > ATTITUDE_WARN_RAD:
            notes.append(f"roll {pose.roll_rad:.3f} rad exceeds the planar model")
        if abs(pose.yaw_rad) > ATTITUDE_WARN_RAD:
            notes.append(f"yaw {pose.yaw_rad:.3f} rad exceeds the planar model")

        image_rel = detections.images.get(ref.id)
        counts = {"originals": len(boxes), "candidates": 0, "kept": len(boxes)}
        if cfg.skip_postprocess or not boxes:
            completed = nms(boxes, cfg.match.nms_iou)
            counts["kept"] = len(completed)
        elif image_rel is None:
            notes.append("no image path in detections; post-processing skipped")
            completed = nms(boxes, cfg.match.nms_iou)
            counts["kept"] = len(completed)
        else:
            image = load_image(detections_path.parent / image_rel,
                               expected_size=(meta.camera.width_px,
                                              meta.camera.height_px))
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                completed = post_process_frame(image, boxes, cfg.match, diag=counts)
            notes.extend(str(w.message) for w in caught)

        diagnostics.append(FrameDiagnostics(
            frame=ref.id, originals=counts["originals"],
            candidates=counts["candidates"], kept=counts["kept"],
            warnings=tuple(notes),
        ))
        plane_boxes.extend(project_box(b, pose, ctx, frame_id=ref.id)
                           for b in completed)

    unique = dedup_plane(plane_boxes, cfg.dedup_iou)
    storeys = count_storeys(unique, cfg.band_overlap_min)

    if not unique:
        extent = Extent(0.0, 0.0, 0.0, 0.0)
        ratio = 0.0
    else:
        if cfg.extent_w_m is not None:
            extent = _user_extent(cfg, unique)
        else:
            extent = auto_extent(unique, cfg.wall_margin_m)
        ratio = area_ratio(unique, extent)

    metrics = FacadeMetrics(
        window_count=len(unique),
        storey_count=storeys.storey_count,
        windows_per_storey=storeys.windows_per_storey,
        area_ratio=ratio,
        facade_extent=extent,
    )
    return PipelineResult(metrics=metrics, unique=tuple(unique), storeys=storeys,
                          diagnostics=tuple(diagnostics))


def summary_line(result: PipelineResult) -> str:
    m = result.metrics
    return (f"windows={m.window_count} storeys={m.storey_count} "
            f"area_ratio={m.area_ratio:.6f}")


def write_outputs(result: PipelineResult, out_dir) -> dict[str, Path]:
    """Write metrics.json, report.svg, and diagnostics.json into out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics_text = metrics_to_json(result.metrics, list(result.unique),
                                   result.storeys.storey_bands)
    paths = {
        "metrics": out_dir / "metrics.json",
        "report": out_dir / "report.svg",
        "diagnostics": out_dir / "diagnostics.json",
    }
    paths["metrics"].write_text(metrics_text, encoding="utf-8")
    paths["report"].write_text(render_report(json.loads(metrics_text)),
                               encoding="utf-8")
    diag_doc = [
        {"frame": d.frame, "originals": d.originals, "candidates": d.candidates,
         "kept": d.kept, "warnings": list(d.warnings)}
        for d in result.diagnostics
    ]
    paths["diagnostics"].write_text(json.dumps(diag_doc, indent=2) + "\n",
                                    encoding="utf-8")
    return paths

"""Offline toolkit turning a vertical UAV facade survey into metrics.

Inputs are per-frame window detections, pose telemetry, and frame
images; outputs are global facade metrics: unique window count, storey
count, window-to-facade area ratio, and a panorama report.
"""

from .errors import FacadeScanError
from .geometry import PixelBox, PlaneBox, iou, nms
from .ingest import CameraModel, Pose, SequenceMeta, parse_telemetry, sync_pose
from .planemap import (
    FacadeMetrics,
    MappingContext,
    area_ratio,
    count_storeys,
    dedup_plane,
    pitch_correction,
    project_box,
    project_point,
)
from .pipeline import RunConfig, run_pipeline
from .postprocess import MatchParams, eval_detections, post_process_frame
from .synth import FacadeLayout, FlightPlan, corrupt_detections, gen_sequence

__version__ = "0.1.0"

__all__ = [
    "FacadeScanError",
    "PixelBox",
    "PlaneBox",
    "iou",
    "nms",
    "CameraModel",
    "Pose",
    "SequenceMeta",
    "parse_telemetry",
    "sync_pose",
    "MatchParams",
    "post_process_frame",
    "eval_detections",
    "MappingContext",
    "FacadeMetrics",
    "pitch_correction",
    "project_point",
    "project_box",
    "dedup_plane",
    "count_storeys",
    "area_ratio",
    "FacadeLayout",
    "FlightPlan",
    "gen_sequence",
    "corrupt_detections",
    "RunConfig",
    "run_pipeline",
    "__version__",
]

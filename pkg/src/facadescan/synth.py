"""Synthetic facade surveys with known ground truth.

The generator runs the survey geometry backwards: a window grid is
placed on the facade plane in meters, a vertical flight is sampled,
and each frame's truth boxes come from projecting the metric window
corners back into pixels with that frame's pose. Frames are rendered
as flat rectangles, which is all the matching engine needs, and every
artifact is written through the same serializers the loaders parse.

corrupt_detections degrades truth into something shaped like real
detector output: boxes dropped at random (never all of a frame's),
corners jittered, scores resampled. All randomness flows from numpy's
default_rng on an explicit seed, so identical seeds give
byte-identical datasets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .geometry import PixelBox
from .ingest import (
    CameraModel,
    FrameRef,
    GrayImage,
    Pose,
    SequenceMeta,
    save_image,
    serialize_detections,
    serialize_sequence_config,
    serialize_telemetry,
)
from .planemap import MappingContext, pitch_correction

__all__ = [
    "FacadeLayout",
    "FlightPlan",
    "SynthDataset",
    "inverse_project",
    "plan_for_layout",
    "gen_sequence",
    "corrupt_detections",
    "write_sequence",
]

FRAME_DT_S = 0.5


@dataclass(frozen=True)
class FacadeLayout:
    """A regular window grid: S storeys of W windows, meters, bottom-up.

    The grid is centered horizontally on the plane origin. Windows of
    the lowest storey have their bottoms at sill_m above the ground
    line. storey_intensity_step shades each storey's windows a little
    differently to reproduce the varying-texture failure mode; leave 0
    for the uniform facades the matcher supports.
    """

    storeys: int
    windows_per_storey: int
    window_w_m: float = 1.2
    window_h_m: float = 1.5
    h_gap_m: float = 0.5
    v_gap_m: float = 0.5
    sill_m: float = 0.8
    wall_intensity: int = 200
    window_intensity: int = 60
    storey_intensity_step: float = 0.0

    def __post_init__(self):
        if self.storeys < 1 or self.windows_per_storey < 1:
            raise ValueError("need at least one storey and one window per storey")
        for name in ("window_w_m", "window_h_m", "h_gap_m", "v_gap_m", "sill_m"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if not (0 <= self.window_intensity <= 255 and 0 <= self.wall_intensity <= 255):
            raise ValueError("intensities must be 8-bit values")
        if self.window_intensity == self.wall_intensity:
            raise ValueError("window and wall intensity must differ")

    @property
    def content_w_m(self) -> float:
        """Width of the window hull plus one gap of wall on each side."""
        w = self.windows_per_storey
        return w * self.window_w_m + (w + 1) * self.h_gap_m

    @property
    def top_m(self) -> float:
        """Height of the topmost window's upper edge above the ground."""
        return (self.sill_m + self.storeys * self.window_h_m
                + (self.storeys - 1) * self.v_gap_m)

    def window_rect_m(self, storey: int, col: int) -> tuple[float, float, float, float]:
        """(x0, y0, x1, y1) of one window on the plane, y up, storey 0 lowest."""
        x0 = (-self.content_w_m / 2.0 + self.h_gap_m
              + col * (self.window_w_m + self.h_gap_m))
        y0 = self.sill_m + storey * (self.window_h_m + self.v_gap_m)
        return x0, y0, x0 + self.window_w_m, y0 + self.window_h_m

    @property
    def total_window_area_m2(self) -> float:
        return self.storeys * self.windows_per_storey * self.window_w_m * self.window_h_m


@dataclass(frozen=True)
class FlightPlan:
    """A vertical survey leg: evenly spaced altitudes, jittered pitch."""

    frame_count: int
    start_H_m: float
    end_H_m: float
    depth_m: float
    camera: CameraModel
    pitch_noise_sigma_rad: float = 0.0
    noise_levels: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.frame_count < 2:
            raise ValueError(f"frame_count must be >= 2, got {self.frame_count}")
        if not self.end_H_m > self.start_H_m:
            raise ValueError("end_H_m must be above start_H_m")
        if self.depth_m <= 0:
            raise ValueError("depth_m must be > 0")
        if self.pitch_noise_sigma_rad < 0 or self.noise_levels < 0:
            raise ValueError("noise parameters must be >= 0")
        # Consecutive frames must share at least 30% of their vertical
        # field of view (nominal, pitch ignored), or the facade strip
        # between them is simply never photographed.
        vspan = self.camera.height_px * self.depth_m / self.camera.focal_px
        step = (self.end_H_m - self.start_H_m) / (self.frame_count - 1)
        if 1.0 - step / vspan < 0.30:
            raise ValueError(
                f"altitude step {step:.2f} m leaves less than 30% overlap "
                f"between consecutive frames (view spans {vspan:.2f} m)"
            )

    @property
    def altitudes(self) -> list[float]:
        step = (self.end_H_m - self.start_H_m) / (self.frame_count - 1)
        return [self.start_H_m + k * step for k in range(self.frame_count)]


@dataclass(frozen=True)
class SynthDataset:
    """One generated survey, in memory, in the loaders' vocabulary."""

    meta: SequenceMeta
    poses: tuple[Pose, ...]
    truth: dict[str, list[PixelBox]]
    images: dict[str, GrayImage]
    layout: FacadeLayout
    plan: FlightPlan

    @property
    def image_paths(self) -> dict[str, str]:
        return {f.id: f"frames/{f.id}.pgm" for f in self.meta.frames}


def inverse_project(Y_m: float, pose: Pose, ctx: MappingContext) -> float:
    """Pixel row of a facade height; exact inverse of project_point."""
    beta_rel = pose.pitch_rad - ctx.beta0_rad
    offset = Y_m - pose.altitude_m - pitch_correction(ctx.depth_m, beta_rel)
    return ctx.camera.height_px / 2.0 - offset * ctx.camera.focal_px / ctx.depth_m


def plan_for_layout(layout: FacadeLayout, depth_m: float = 5.0,
                    px_per_m: float = 18.0, height_px: int = 130,
                    pitch_noise_sigma_rad: float = 0.0,
                    noise_levels: int = 0, seed: int = 0,
                    frame_count: int | None = None) -> FlightPlan:
    """Size a camera and flight so the whole facade gets photographed.

    The image is wide enough for the full window hull plus margin, so
    clipping only ever happens at the top and bottom image edges. The
    leg starts one meter above the sill and ends one meter below the
    top window edge; the wide vertical field of view covers the rest.
    """
    focal_px = depth_m * px_per_m
    width_px = int(math.ceil(layout.content_w_m * px_per_m)) + 24
    camera = CameraModel(focal_px=focal_px, width_px=width_px, height_px=height_px)
    start = layout.sill_m + 1.0
    end = layout.top_m - 1.0
    if end <= start:
        end = start + 0.5
    if frame_count is None:
        frame_count = max(3, int(math.ceil((end - start) / 1.5)) + 1)
    return FlightPlan(
        frame_count=frame_count, start_H_m=start, end_H_m=end,
        depth_m=depth_m, camera=camera,
        pitch_noise_sigma_rad=pitch_noise_sigma_rad,
        noise_levels=noise_levels, seed=seed,
    )


def _render_frame(layout: FacadeLayout, pose: Pose, ctx: MappingContext,
                  rng: np.random.Generator, noise_levels: int) -> GrayImage:
    """Rasterize the facade as seen from one pose.

    A pixel belongs to a window when its center falls inside the
    window's projected rectangle, so rendering, truth boxes, and the
    matcher all agree on geometry to within half a pixel.
    """
    cam = ctx.camera
    canvas = np.full((cam.height_px, cam.width_px), layout.wall_intensity,
                     dtype=np.int16)
    col_scale = cam.focal_px / ctx.depth_m
    for storey in range(layout.storeys):
        shade = layout.window_intensity + storey * layout.storey_intensity_step
        value = int(round(min(255.0, max(0.0, shade))))
        for col in range(layout.windows_per_storey):
            x0m, y0m, x1m, y1m = layout.window_rect_m(storey, col)
            px0 = x0m * col_scale + cam.width_px / 2.0
            px1 = x1m * col_scale + cam.width_px / 2.0
            py0 = inverse_project(y1m, pose, ctx)  # top edge, smaller row
            py1 = inverse_project(y0m, pose, ctx)
            c0 = max(0, math.ceil(px0 - 0.5))
            c1 = min(cam.width_px, math.ceil(px1 - 0.5))
            r0 = max(0, math.ceil(py0 - 0.5))
            r1 = min(cam.height_px, math.ceil(py1 - 0.5))
            if c1 > c0 and r1 > r0:
                canvas[r0:r1, c0:c1] = value
    if noise_levels > 0:
        canvas += rng.integers(-noise_levels, noise_levels + 1, size=canvas.shape,
                               dtype=np.int16)
    return GrayImage(np.clip(canvas, 0, 255).astype(np.uint8))


def _frame_truth(layout: FacadeLayout, pose: Pose, ctx: MappingContext,
                 visibility_min: float) -> list[tuple[tuple[int, int], PixelBox]]:
    """((storey, col), box) for every window visible enough in this frame."""
    cam = ctx.camera
    col_scale = cam.focal_px / ctx.depth_m
    boxes = []
    for storey in range(layout.storeys):
        for col in range(layout.windows_per_storey):
            x0m, y0m, x1m, y1m = layout.window_rect_m(storey, col)
            px0 = x0m * col_scale + cam.width_px / 2.0
            px1 = x1m * col_scale + cam.width_px / 2.0
            py0 = inverse_project(y1m, pose, ctx)
            py1 = inverse_project(y0m, pose, ctx)
            cx0, cx1 = max(px0, 0.0), min(px1, float(cam.width_px))
            cy0, cy1 = max(py0, 0.0), min(py1, float(cam.height_px))
            if cx1 <= cx0 or cy1 <= cy0:
                continue
            visible = (cx1 - cx0) * (cy1 - cy0)
            full = (px1 - px0) * (py1 - py0)
            if visible < visibility_min * full:
                continue
            boxes.append(((storey, col),
                          PixelBox(x=cx0, y=cy0, w=cx1 - cx0, h=cy1 - cy0, score=1.0)))
    return boxes


def gen_sequence(layout: FacadeLayout, plan: FlightPlan,
                 visibility_min: float = 0.6) -> SynthDataset:
    """Generate one survey: poses, telemetry, truth boxes, rendered frames.

    Telemetry carries a sample at every frame time plus the midpoints
    between them, so the log is denser than the frame clock. Raises
    ConfigError when some window never reaches the visibility threshold
    in any frame, which means the plan does not cover the layout.
    """
    if not (0.0 < visibility_min <= 1.0):
        raise ConfigError(f"visibility_min must be in (0, 1], got {visibility_min}")
    rng = np.random.default_rng(plan.seed)
    pitches = rng.normal(0.0, plan.pitch_noise_sigma_rad, plan.frame_count) \
        if plan.pitch_noise_sigma_rad > 0 else np.zeros(plan.frame_count)
    ctx = MappingContext(depth_m=plan.depth_m, camera=plan.camera,
                         beta0_rad=float(pitches[0]))

    frame_poses = [
        Pose(t=k * FRAME_DT_S, altitude_m=h, roll_rad=0.0,
             pitch_rad=float(pitches[k]), yaw_rad=0.0)
        for k, h in enumerate(plan.altitudes)
    ]
    log: list[Pose] = []
    for a, b in zip(frame_poses, frame_poses[1:]):
        log.append(a)
        log.append(Pose(
            t=(a.t + b.t) / 2.0,
            altitude_m=(a.altitude_m + b.altitude_m) / 2.0,
            roll_rad=0.0,
            pitch_rad=(a.pitch_rad + b.pitch_rad) / 2.0,
            yaw_rad=0.0,
        ))
    log.append(frame_poses[-1])

    frames = tuple(
        FrameRef(id=f"frame_{k:04d}", t_s=p.t, image=f"frames/frame_{k:04d}.pgm")
        for k, p in enumerate(frame_poses)
    )
    meta = SequenceMeta(depth_m=plan.depth_m, camera=plan.camera, frames=frames)

    truth: dict[str, list[PixelBox]] = {}
    images: dict[str, GrayImage] = {}
    seen: set[tuple[int, int]] = set()
    for ref, pose in zip(frames, frame_poses):
        labeled = _frame_truth(layout, pose, ctx, visibility_min)
        seen.update(cell for cell, _ in labeled)
        truth[ref.id] = [box for _, box in labeled]
        images[ref.id] = _render_frame(layout, pose, ctx, rng, plan.noise_levels)

    expected = layout.storeys * layout.windows_per_storey
    if len(seen) < expected:
        per_frame = [len(b) for b in truth.values()]
        raise ConfigError(
            f"flight plan never covers {expected - len(seen)} of {expected} windows "
            f"(per-frame truth sizes: {per_frame}); widen the altitude range "
            "or the field of view"
        )
    return SynthDataset(meta=meta, poses=tuple(log), truth=truth, images=images,
                        layout=layout, plan=plan)


def corrupt_detections(truth: dict[str, list[PixelBox]], dropout_p: float,
                       jitter_sigma_px: float, seed: int,
                       camera: CameraModel | None = None) -> dict[str, list[PixelBox]]:
    """Degrade truth boxes into plausible detector output.

    Boxes drop independently with probability dropout_p, but a frame
    that had boxes always keeps at least one (the mask is redrawn until
    something survives). Survivor corners get N(0, jitter_sigma^2)
    noise, clipped back inside the image when a camera is given, and
    scores are resampled from U(0.7, 1.0). Deterministic per seed.
    """
    if not (0.0 <= dropout_p < 1.0):
        raise ValueError(f"dropout_p must be in [0, 1), got {dropout_p}")
    if jitter_sigma_px < 0:
        raise ValueError(f"jitter_sigma_px must be >= 0, got {jitter_sigma_px}")
    rng = np.random.default_rng(seed)
    out: dict[str, list[PixelBox]] = {}
    for frame_id, boxes in truth.items():
        if not boxes:
            out[frame_id] = []
            continue
        keep = rng.random(len(boxes)) >= dropout_p
        while not keep.any():
            keep = rng.random(len(boxes)) >= dropout_p
        kept = []
        for box, k in zip(boxes, keep):
            if not k:
                continue
            x0, y0 = box.x, box.y
            x1, y1 = box.x + box.w, box.y + box.h
            if jitter_sigma_px > 0:
                dx0, dy0, dx1, dy1 = rng.normal(0.0, jitter_sigma_px, 4)
                x0, y0, x1, y1 = x0 + dx0, y0 + dy0, x1 + dx1, y1 + dy1
            if camera is not None:
                x0, x1 = max(x0, 0.0), min(x1, float(camera.width_px))
                y0, y1 = max(y0, 0.0), min(y1, float(camera.height_px))
            w = max(x1 - x0, 1.0)
            h = max(y1 - y0, 1.0)
            score = 0.7 + 0.3 * rng.random()
            kept.append(PixelBox(x=x0, y=y0, w=w, h=h, score=score))
        out[frame_id] = kept
    return out


def write_sequence(dataset: SynthDataset, out_dir,
                   detections: dict[str, list[PixelBox]] | None = None) -> Path:
    """Write a dataset to disk in the loaders' on-disk formats.

    Produces config.json, telemetry.csv, frames/*.pgm, annotations.json
    (the truth with scores 1.0), and detections.json (the given
    detections, or the truth when none are supplied). Returns the path
    to config.json.
    """
    out_dir = Path(out_dir)
    (out_dir / "frames").mkdir(parents=True, exist_ok=True)
    (out_dir / "telemetry.csv").write_text(
        serialize_telemetry(dataset.poses), encoding="utf-8")
    for frame_id, image in dataset.images.items():
        save_image(image, out_dir / "frames" / f"{frame_id}.pgm")
    paths = dataset.image_paths
    (out_dir / "annotations.json").write_text(
        serialize_detections(dataset.truth, paths), encoding="utf-8")
    (out_dir / "detections.json").write_text(
        serialize_detections(detections if detections is not None else dataset.truth,
                             paths),
        encoding="utf-8")
    config = out_dir / "config.json"
    config.write_text(
        serialize_sequence_config(dataset.meta, "telemetry.csv", "detections.json"),
        encoding="utf-8")
    return config

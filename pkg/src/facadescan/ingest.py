"""Parsers and loaders for survey inputs.

On-disk formats owned by this module:

* Telemetry CSV with exact header ``t_s,altitude_m,roll_rad,pitch_rad,yaw_rad``,
  one sample per line, decimal-point floats, UTF-8, LF or CRLF.
* Detections/annotations JSON::

      {"frames": [{"id": "...", "image": "frames/....pgm",
                   "boxes": [{"x":f,"y":f,"w":f,"h":f,"score":f}, ...]}]}

  Annotations use the same schema with score fixed at 1.0.
* Sequence config JSON::

      {"depth_m": f, "focal_px": f, "width_px": i, "height_px": i,
       "telemetry": "path", "detections": "path",
       "frame_times": [{"id": "...", "t_s": f}, ...]}

* Frame images: binary PGM (P5) or PNG, 8-bit. Color PNGs collapse to
  luminance via round(0.299 R + 0.587 G + 0.114 B).

Altitude is measured from the line where the facade meets the ground,
not from the takeoff point; a constant offset in the altitude reference
shifts all mapped heights but never changes counts.
"""

from __future__ import annotations

import io
import json
import math
from bisect import bisect_left
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    ConfigError,
    DetectionFormatError,
    DetectionValidationError,
    EmptyLogError,
    ImageFormatError,
    PoseSyncError,
    TelemetryOrderError,
    TelemetryParseError,
)
from .geometry import PixelBox

__all__ = [
    "Pose",
    "CameraModel",
    "FrameRef",
    "SequenceMeta",
    "GrayImage",
    "TELEMETRY_HEADER",
    "parse_telemetry",
    "serialize_telemetry",
    "sync_pose",
    "DetectionSet",
    "load_detections",
    "serialize_detections",
    "load_image",
    "save_image",
    "load_sequence_config",
    "serialize_sequence_config",
]

TELEMETRY_HEADER = "t_s,altitude_m,roll_rad,pitch_rad,yaw_rad"

# Fraction of a box's own size it may hang over the image edge before it
# is rejected; edge windows are a known detector hard case and clipping
# them silently would bias counts.
EDGE_TOLERANCE = 0.10


@dataclass(frozen=True)
class Pose:
    """UAV state at one timestamp: altitude plus attitude angles (radians)."""

    t: float
    altitude_m: float
    roll_rad: float
    pitch_rad: float
    yaw_rad: float

    def __post_init__(self):
        for name in ("t", "altitude_m", "roll_rad", "pitch_rad", "yaw_rad"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"pose field {name} is not finite")
        for name in ("roll_rad", "pitch_rad", "yaw_rad"):
            if abs(getattr(self, name)) >= math.pi:
                raise ValueError(f"pose angle {name}={getattr(self, name)} outside (-pi, pi)")


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics: focal length in pixels, image size in pixels.

    The optical center is assumed to sit at the image center.
    """

    focal_px: float
    width_px: int
    height_px: int

    def __post_init__(self):
        if not (self.focal_px > 0 and math.isfinite(self.focal_px)):
            raise ValueError(f"focal_px must be positive, got {self.focal_px}")
        if self.width_px < 1 or self.height_px < 1:
            raise ValueError(f"image size {self.width_px}x{self.height_px} invalid")


@dataclass(frozen=True)
class FrameRef:
    """One captured frame: identifier, timestamp, optional image path."""

    id: str
    t_s: float
    image: str | None = None


@dataclass(frozen=True)
class SequenceMeta:
    """Per-sequence constants: facade depth, camera, ordered frame list."""

    depth_m: float
    camera: CameraModel
    frames: tuple[FrameRef, ...]

    def __post_init__(self):
        if not (self.depth_m > 0 and math.isfinite(self.depth_m)):
            raise ValueError(f"depth_m must be positive, got {self.depth_m}")
        times = [f.t_s for f in self.frames]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("frame timestamps must be strictly increasing")


class GrayImage:
    """Row-major 8-bit-range luminance raster.

    ``pixels`` is a 2-D array (height x width) with values in [0, 255].
    Integer dtypes come from files and the renderer; float values are
    legal so intensity-transformed images can flow through matching.
    """

    __slots__ = ("pixels",)

    def __init__(self, pixels: np.ndarray):
        arr = np.asarray(pixels)
        if arr.ndim != 2 or arr.size == 0:
            raise ValueError(f"expected a non-empty 2-D array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr.astype(np.float64))):
            raise ValueError("image contains non-finite values")
        if arr.min() < 0 or arr.max() > 255:
            raise ValueError("image values outside [0, 255]")
        self.pixels = arr

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, GrayImage)
            and self.pixels.shape == other.pixels.shape
            and bool(np.all(self.pixels == other.pixels))
        )

    def __repr__(self) -> str:
        return f"GrayImage({self.width}x{self.height})"


# --------------------------------------------------------------------------
# Telemetry


def parse_telemetry(source) -> list[Pose]:
    """Parse a telemetry CSV (string, bytes, or text file object) into poses.

    Timestamps must be strictly increasing. Raises TelemetryParseError
    (with line number), TelemetryOrderError, or EmptyLogError.
    """
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    if hasattr(source, "read"):
        source = source.read()
    lines = source.splitlines()
    if not lines:
        raise TelemetryParseError(1, "missing header")
    header = lines[0].strip()
    if header != TELEMETRY_HEADER:
        raise TelemetryParseError(1, f"expected header {TELEMETRY_HEADER!r}, got {header!r}")
    poses: list[Pose] = []
    for line_no, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 5:
            raise TelemetryParseError(line_no, f"expected 5 fields, got {len(parts)}")
        try:
            values = [float(p) for p in parts]
        except ValueError as exc:
            raise TelemetryParseError(line_no, str(exc)) from None
        try:
            pose = Pose(*values)
        except ValueError as exc:
            raise TelemetryParseError(line_no, str(exc)) from None
        if poses and pose.t <= poses[-1].t:
            raise TelemetryOrderError(
                f"line {line_no}: t={pose.t} does not increase past t={poses[-1].t}"
            )
        poses.append(pose)
    if not poses:
        raise EmptyLogError("telemetry log has a header but no samples")
    return poses


def serialize_telemetry(poses) -> str:
    """Inverse of parse_telemetry; float repr keeps round-trips exact."""
    out = [TELEMETRY_HEADER]
    for p in poses:
        out.append(f"{p.t!r},{p.altitude_m!r},{p.roll_rad!r},{p.pitch_rad!r},{p.yaw_rad!r}")
    return "\n".join(out) + "\n"


def sync_pose(frame_t: float, poses: list[Pose], slack: float = 0.1, mode: str = "linear") -> Pose:
    """Pose at a frame timestamp, from a sorted telemetry log.

    ``linear`` interpolates every field between the bracketing samples;
    ``nearest`` returns the closest sample. Timestamps up to ``slack``
    outside the log clamp to the endpoint; beyond that PoseSyncError.
    An exact sample timestamp returns that sample verbatim.
    """
    if not poses:
        raise PoseSyncError("telemetry log is empty")
    if mode not in ("linear", "nearest"):
        raise ValueError(f"unknown sync mode {mode!r}")
    t_first, t_last = poses[0].t, poses[-1].t
    if frame_t < t_first - slack or frame_t > t_last + slack:
        raise PoseSyncError(
            f"frame time {frame_t} outside telemetry range "
            f"[{t_first}, {t_last}] plus slack {slack}"
        )
    times = [p.t for p in poses]
    i = bisect_left(times, frame_t)
    if i < len(times) and times[i] == frame_t:
        return poses[i]
    if frame_t <= t_first:
        return poses[0]
    if frame_t >= t_last:
        return poses[-1]
    lo, hi = poses[i - 1], poses[i]
    if mode == "nearest":
        return lo if (frame_t - lo.t) <= (hi.t - frame_t) else hi
    u = (frame_t - lo.t) / (hi.t - lo.t)
    return Pose(
        t=frame_t,
        altitude_m=lo.altitude_m + u * (hi.altitude_m - lo.altitude_m),
        roll_rad=lo.roll_rad + u * (hi.roll_rad - lo.roll_rad),
        pitch_rad=lo.pitch_rad + u * (hi.pitch_rad - lo.pitch_rad),
        yaw_rad=lo.yaw_rad + u * (hi.yaw_rad - lo.yaw_rad),
    )


# --------------------------------------------------------------------------
# Detections


class DetectionSet(dict):
    """Per-frame box lists keyed by frame id, plus each frame's image path."""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.images: dict[str, str | None] = {}


def _validate_box_bounds(box: PixelBox, camera: CameraModel, frame_id: str, index: int) -> None:
    over_left = max(0.0, -box.x)
    over_right = max(0.0, box.x + box.w - camera.width_px)
    over_top = max(0.0, -box.y)
    over_bottom = max(0.0, box.y + box.h - camera.height_px)
    if over_left > EDGE_TOLERANCE * box.w or over_right > EDGE_TOLERANCE * box.w \
            or over_top > EDGE_TOLERANCE * box.h or over_bottom > EDGE_TOLERANCE * box.h:
        raise DetectionValidationError(
            f"frame {frame_id!r} box {index} exceeds image bounds by more than "
            f"{EDGE_TOLERANCE:.0%} of its size"
        )


def load_detections(source, camera: CameraModel | None = None,
                    known_ids=None) -> DetectionSet:
    """Parse a detections/annotations JSON document.

    Boxes are validated (positive size, score in [0, 1]); with a camera,
    boxes may overhang the image by at most 10% of their own size. With
    ``known_ids``, frame ids outside that set are rejected.
    """
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    if hasattr(source, "read"):
        source = source.read()
    try:
        doc = json.loads(source)
    except json.JSONDecodeError as exc:
        raise DetectionFormatError(f"malformed JSON: {exc}") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("frames"), list):
        raise DetectionFormatError('document must be an object with a "frames" list')
    known = set(known_ids) if known_ids is not None else None
    result = DetectionSet()
    for entry in doc["frames"]:
        if not isinstance(entry, dict) or "id" not in entry:
            raise DetectionFormatError("each frame entry must be an object with an 'id'")
        frame_id = entry["id"]
        if not isinstance(frame_id, str):
            raise DetectionFormatError(f"frame id {frame_id!r} is not a string")
        if frame_id in result:
            raise DetectionFormatError(f"duplicate frame id {frame_id!r}")
        if known is not None and frame_id not in known:
            raise DetectionValidationError(f"unknown frame id {frame_id!r}")
        boxes_raw = entry.get("boxes", [])
        if not isinstance(boxes_raw, list):
            raise DetectionFormatError(f"frame {frame_id!r}: 'boxes' must be a list")
        boxes: list[PixelBox] = []
        for i, b in enumerate(boxes_raw):
            if not isinstance(b, dict):
                raise DetectionFormatError(f"frame {frame_id!r} box {i} is not an object")
            try:
                box = PixelBox(
                    x=float(b["x"]), y=float(b["y"]),
                    w=float(b["w"]), h=float(b["h"]),
                    score=float(b["score"]),
                )
            except (KeyError, TypeError) as exc:
                raise DetectionFormatError(f"frame {frame_id!r} box {i}: {exc}") from None
            except Exception as exc:
                raise DetectionValidationError(f"frame {frame_id!r} box {i}: {exc}") from None
            if camera is not None:
                _validate_box_bounds(box, camera, frame_id, i)
            boxes.append(box)
        result[frame_id] = boxes
        image = entry.get("image")
        if image is not None and not isinstance(image, str):
            raise DetectionFormatError(f"frame {frame_id!r}: 'image' must be a string path")
        result.images[frame_id] = image
    return result


def serialize_detections(boxes_by_frame, images=None) -> str:
    """Inverse of load_detections. Frame order follows the mapping order."""
    images = images or {}
    frames = []
    for frame_id, boxes in boxes_by_frame.items():
        entry = {"id": frame_id}
        image = images.get(frame_id)
        if image is not None:
            entry["image"] = image
        entry["boxes"] = [
            {"x": b.x, "y": b.y, "w": b.w, "h": b.h, "score": b.score} for b in boxes
        ]
        frames.append(entry)
    return json.dumps({"frames": frames}, indent=2) + "\n"


# --------------------------------------------------------------------------
# Images


def _read_pgm(data: bytes) -> GrayImage:
    # Header: magic, width, height, maxval as whitespace-separated tokens,
    # '#' comments allowed, then ONE whitespace byte, then the raster.
    pos = 2  # past "P5"
    tokens: list[int] = []
    while len(tokens) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            eol = data.find(b"\n", pos)
            if eol < 0:
                raise ImageFormatError("PGM truncated inside a header comment")
            pos = eol + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError("PGM header ended before width/height/maxval")
        try:
            tokens.append(int(data[start:pos]))
        except ValueError:
            raise ImageFormatError(f"bad PGM header token {data[start:pos]!r}") from None
    width, height, maxval = tokens
    if width < 1 or height < 1:
        raise ImageFormatError(f"bad PGM dimensions {width}x{height}")
    if not (0 < maxval <= 255):
        raise ImageFormatError(f"unsupported PGM maxval {maxval} (8-bit only)")
    pos += 1  # single whitespace byte after maxval
    payload = data[pos:pos + width * height]
    if len(payload) < width * height:
        raise ImageFormatError(
            f"PGM payload truncated: expected {width * height} bytes, got {len(payload)}"
        )
    if len(data) - pos > width * height:
        raise ImageFormatError("PGM payload longer than header declares")
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    return GrayImage(arr.copy())


def _luma(rgb: np.ndarray) -> np.ndarray:
    y = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
    return np.rint(y).astype(np.uint8)


def _read_png(data: bytes) -> GrayImage:
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(io.BytesIO(data)) as img:
            img.load()
            mode = img.mode
            if mode == "P":
                img = img.convert("RGB")
                mode = "RGB"
            if mode == "L":
                arr = np.asarray(img, dtype=np.uint8)
            elif mode == "LA":
                arr = np.asarray(img, dtype=np.uint8)[..., 0]
            elif mode in ("RGB", "RGBA"):
                arr = _luma(np.asarray(img, dtype=np.float64)[..., :3])
            else:
                raise ImageFormatError(f"unsupported PNG mode {mode!r} (8-bit only)")
    except UnidentifiedImageError:
        raise ImageFormatError("not a decodable PNG file") from None
    except OSError as exc:
        raise ImageFormatError(f"truncated or corrupt PNG: {exc}") from None
    return GrayImage(arr)


def load_image(path, expected_size: tuple[int, int] | None = None) -> GrayImage:
    """Load an 8-bit grayscale image from a binary PGM (P5) or PNG file.

    Format is sniffed from magic bytes. ``expected_size`` is (width,
    height) from the sequence camera; a mismatch raises ImageFormatError.
    """
    data = Path(path).read_bytes()
    if data[:2] == b"P5":
        img = _read_pgm(data)
    elif data[:8] == b"\x89PNG\r\n\x1a\n":
        img = _read_png(data)
    else:
        raise ImageFormatError(f"{path}: unsupported image format (want P5 PGM or PNG)")
    if expected_size is not None and (img.width, img.height) != tuple(expected_size):
        raise ImageFormatError(
            f"{path}: image is {img.width}x{img.height}, sequence declares "
            f"{expected_size[0]}x{expected_size[1]}"
        )
    return img


def save_image(image: GrayImage, path) -> None:
    """Write a GrayImage as binary PGM or PNG, chosen by file extension."""
    path = Path(path)
    arr = np.rint(np.asarray(image.pixels, dtype=np.float64)).astype(np.uint8)
    if path.suffix.lower() == ".pgm":
        header = f"P5\n{image.width} {image.height}\n255\n".encode("ascii")
        path.write_bytes(header + arr.tobytes())
    elif path.suffix.lower() == ".png":
        from PIL import Image

        Image.fromarray(arr, mode="L").save(path, format="PNG")
    else:
        raise ValueError(f"unsupported image extension {path.suffix!r}")


# --------------------------------------------------------------------------
# Sequence config


def load_sequence_config(path) -> tuple[SequenceMeta, Path, Path]:
    """Load a sequence config JSON.

    Returns (meta, telemetry_path, detections_path) with the file paths
    resolved relative to the config file's directory.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"sequence config not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON: {exc}") from None
    required = ("depth_m", "focal_px", "width_px", "height_px",
                "telemetry", "detections", "frame_times")
    missing = [k for k in required if k not in doc]
    if missing:
        raise ConfigError(f"{path}: missing config keys {missing}")
    try:
        camera = CameraModel(
            focal_px=float(doc["focal_px"]),
            width_px=int(doc["width_px"]),
            height_px=int(doc["height_px"]),
        )
        frames = tuple(
            FrameRef(id=str(ft["id"]), t_s=float(ft["t_s"])) for ft in doc["frame_times"]
        )
        meta = SequenceMeta(depth_m=float(doc["depth_m"]), camera=camera, frames=frames)
    except (TypeError, KeyError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    base = path.parent
    return meta, base / doc["telemetry"], base / doc["detections"]


def serialize_sequence_config(meta: SequenceMeta, telemetry: str, detections: str) -> str:
    """Inverse of load_sequence_config (paths stay as given, i.e. relative)."""
    doc = {
        "depth_m": meta.depth_m,
        "focal_px": meta.camera.focal_px,
        "width_px": meta.camera.width_px,
        "height_px": meta.camera.height_px,
        "telemetry": telemetry,
        "detections": detections,
        "frame_times": [{"id": f.id, "t_s": f.t_s} for f in meta.frames],
    }
    return json.dumps(doc, indent=2) + "\n"

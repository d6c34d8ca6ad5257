from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from facadescan.errors import (
    ConfigError,
    DetectionFormatError,
    DetectionValidationError,
    EmptyLogError,
    ImageFormatError,
    PoseSyncError,
    TelemetryOrderError,
    TelemetryParseError,
)
from facadescan.geometry import PixelBox
from facadescan.ingest import (
    CameraModel,
    GrayImage,
    Pose,
    load_detections,
    load_image,
    load_sequence_config,
    parse_telemetry,
    save_image,
    serialize_detections,
    serialize_telemetry,
    sync_pose,
)

HEADER = "t_s,altitude_m,roll_rad,pitch_rad,yaw_rad"


class TestParseTelemetry:
    def test_single_row(self):
        poses = parse_telemetry(f"{HEADER}\n0.0,4.0,0.0,0.12,0.0\n")
        assert poses == [Pose(t=0.0, altitude_m=4.0, roll_rad=0.0,
                              pitch_rad=0.12, yaw_rad=0.0)]

    def test_non_monotonic_rows_rejected(self):
        text = f"{HEADER}\n1.0,4.0,0,0,0\n0.5,4.1,0,0,0\n"
        with pytest.raises(TelemetryOrderError):
            parse_telemetry(text)

    def test_header_only_is_empty_log(self):
        with pytest.raises(EmptyLogError):
            parse_telemetry(f"{HEADER}\n")

    def test_malformed_row_names_line(self):
        text = f"{HEADER}\n0.0,4.0,0,0,0\nnot,a,row\n"
        with pytest.raises(TelemetryParseError) as exc_info:
            parse_telemetry(text)
        assert exc_info.value.line_no == 3

    def test_wrong_header_rejected(self):
        with pytest.raises(TelemetryParseError):
            parse_telemetry("time,alt\n0.0,4.0\n")

    def test_crlf_accepted(self):
        text = f"{HEADER}\r\n0.0,4.0,0.0,0.1,0.0\r\n1.0,5.0,0.0,0.1,0.0\r\n"
        poses = parse_telemetry(text)
        assert [p.t for p in poses] == [0.0, 1.0]

    def test_angle_magnitude_guard(self):
        text = f"{HEADER}\n0.0,4.0,0.0,{math.pi + 0.1},0.0\n"
        with pytest.raises(TelemetryParseError):
            parse_telemetry(text)

    @given(st.lists(
        st.tuples(
            st.floats(min_value=0.01, max_value=100.0, allow_nan=False),
            st.floats(min_value=-50.0, max_value=50.0, allow_nan=False),
            st.floats(min_value=-1.0, max_value=1.0, allow_nan=False),
            st.floats(min_value=-1.0, max_value=1.0, allow_nan=False),
            st.floats(min_value=-1.0, max_value=1.0, allow_nan=False),
        ),
        min_size=1, max_size=20,
    ))
    @settings(max_examples=50)
    def test_round_trip(self, rows):
        ts = sorted(set(r[0] for r in rows))
        poses = [Pose(t=t, altitude_m=r[1], roll_rad=r[2], pitch_rad=r[3],
                      yaw_rad=r[4])
                 for t, r in zip(ts, rows)]
        text = serialize_telemetry(poses)
        assert parse_telemetry(text) == poses
        assert serialize_telemetry(parse_telemetry(text)) == text


class TestSyncPose:
    def make_log(self):
        return [
            Pose(t=0.0, altitude_m=1.0, roll_rad=0.0, pitch_rad=0.10, yaw_rad=0.0),
            Pose(t=1.0, altitude_m=2.0, roll_rad=0.02, pitch_rad=0.14, yaw_rad=0.01),
        ]

    def test_midpoint_interpolation(self):
        p = sync_pose(0.5, self.make_log())
        assert p.altitude_m == pytest.approx(1.5)
        assert p.pitch_rad == pytest.approx(0.12)

    def test_exact_sample_verbatim(self):
        log = self.make_log()
        assert sync_pose(1.0, log) == log[1]

    def test_outside_slack_raises(self):
        with pytest.raises(PoseSyncError):
            sync_pose(2.0, self.make_log(), slack=0.1)

    def test_within_slack_clamps_to_endpoint(self):
        p = sync_pose(1.05, self.make_log(), slack=0.1)
        assert p.altitude_m == 2.0

    def test_nearest_mode(self):
        log = self.make_log()
        assert sync_pose(0.3, log, mode="nearest") == log[0]
        assert sync_pose(0.8, log, mode="nearest") == log[1]

    def test_empty_log_raises(self):
        with pytest.raises(PoseSyncError):
            sync_pose(0.0, [])

    @given(st.floats(min_value=0.0, max_value=1.0, allow_nan=False))
    @settings(max_examples=50)
    def test_piecewise_linear_between_samples(self, t):
        a, b = self.make_log()
        p = sync_pose(t, [a, b])
        assert p.altitude_m == pytest.approx(a.altitude_m + t * (b.altitude_m - a.altitude_m))
        assert p.pitch_rad == pytest.approx(a.pitch_rad + t * (b.pitch_rad - a.pitch_rad))


class TestLoadDetections:
    CAMERA = CameraModel(focal_px=900.0, width_px=640, height_px=480)

    def doc(self, boxes):
        return json.dumps({"frames": [
            {"id": "frame_0000", "image": "frames/frame_0000.pgm", "boxes": boxes},
        ]})

    def test_single_box(self):
        det = load_detections(self.doc([{"x": 10, "y": 20, "w": 50, "h": 80,
                                         "score": 0.97}]))
        assert det["frame_0000"] == [PixelBox(x=10, y=20, w=50, h=80, score=0.97)]

    def test_negative_width_rejected(self):
        with pytest.raises(DetectionValidationError):
            load_detections(self.doc([{"x": 0, "y": 0, "w": -5, "h": 10,
                                       "score": 0.5}]))

    def test_empty_frames_list(self):
        assert dict(load_detections(json.dumps({"frames": []}))) == {}

    def test_malformed_document(self):
        with pytest.raises(DetectionFormatError):
            load_detections("{not json")

    def test_missing_score_key(self):
        with pytest.raises(DetectionFormatError):
            load_detections(self.doc([{"x": 0, "y": 0, "w": 5, "h": 5}]))

    def test_edge_tolerance_allows_slight_overhang(self):
        # 10% of the box size may stick out past the image edge.
        box = {"x": -4.0, "y": 0, "w": 50, "h": 50, "score": 0.9}
        det = load_detections(self.doc([box]), camera=self.CAMERA)
        assert len(det["frame_0000"]) == 1

    def test_edge_tolerance_rejects_large_overhang(self):
        box = {"x": -6.0, "y": 0, "w": 50, "h": 50, "score": 0.9}
        with pytest.raises(DetectionValidationError):
            load_detections(self.doc([box]), camera=self.CAMERA)

    def test_unknown_frame_id_rejected(self):
        with pytest.raises(DetectionValidationError):
            load_detections(self.doc([]), known_ids={"other_frame"})

    def test_round_trip(self):
        boxes = {"f0": [PixelBox(x=1.5, y=2.25, w=30.0, h=40.0, score=0.875)],
                 "f1": []}
        text = serialize_detections(boxes)
        loaded = load_detections(text)
        assert dict(loaded) == boxes
        assert serialize_detections(dict(loaded)) == text


class TestImages:
    def test_pgm_bytes_verbatim(self, tmp_path):
        path = tmp_path / "tiny.pgm"
        path.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 255, 128, 64]))
        img = load_image(path)
        assert (img.width, img.height) == (2, 2)
        assert img.pixels.tolist() == [[0, 255], [128, 64]]

    def test_pgm_truncated_payload(self, tmp_path):
        path = tmp_path / "short.pgm"
        path.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 255, 128]))
        with pytest.raises(ImageFormatError):
            load_image(path)

    def test_pgm_with_comments(self, tmp_path):
        path = tmp_path / "c.pgm"
        path.write_bytes(b"P5\n# a comment\n2 1\n255\n" + bytes([7, 9]))
        assert load_image(path).pixels.tolist() == [[7, 9]]

    def test_pgm_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        img = GrayImage(rng.integers(0, 256, size=(13, 17), dtype=np.uint8))
        path = tmp_path / "rt.pgm"
        save_image(img, path)
        assert load_image(path) == img
        data = path.read_bytes()
        save_image(load_image(path), path)
        assert path.read_bytes() == data

    def test_png_round_trip(self, tmp_path):
        rng = np.random.default_rng(4)
        img = GrayImage(rng.integers(0, 256, size=(9, 11), dtype=np.uint8))
        path = tmp_path / "rt.png"
        save_image(img, path)
        assert load_image(path) == img

    def test_color_png_luma(self, tmp_path):
        from PIL import Image

        rgb = np.zeros((2, 2, 3), dtype=np.uint8)
        rgb[0, 0] = (255, 0, 0)
        rgb[0, 1] = (0, 255, 0)
        rgb[1, 0] = (0, 0, 255)
        rgb[1, 1] = (200, 100, 50)
        path = tmp_path / "color.png"
        Image.fromarray(rgb, mode="RGB").save(path)
        img = load_image(path)
        expect = np.rint(0.299 * rgb[..., 0] + 0.587 * rgb[..., 1]
                         + 0.114 * rgb[..., 2])
        assert img.pixels.tolist() == expect.astype(np.uint8).tolist()

    def test_unsupported_format(self, tmp_path):
        path = tmp_path / "bad.pgm"
        path.write_bytes(b"GIF89a whatever")
        with pytest.raises(ImageFormatError):
            load_image(path)

    def test_expected_size_mismatch(self, tmp_path):
        path = tmp_path / "t.pgm"
        save_image(GrayImage(np.zeros((4, 6), dtype=np.uint8)), path)
        with pytest.raises(ImageFormatError):
            load_image(path, expected_size=(6, 6))


class TestSequenceConfig:
    def write_config(self, tmp_path, **overrides):
        doc = {
            "depth_m": 5.0,
            "focal_px": 920.0,
            "width_px": 640,
            "height_px": 480,
            "telemetry": "telemetry.csv",
            "detections": "detections.json",
            "frame_times": [{"id": "frame_0000", "t_s": 0.0},
                            {"id": "frame_0001", "t_s": 0.5}],
        }
        doc.update(overrides)
        path = tmp_path / "config.json"
        path.write_text(json.dumps(doc), encoding="utf-8")
        return path

    def test_load(self, tmp_path):
        meta, telemetry, detections = load_sequence_config(self.write_config(tmp_path))
        assert meta.depth_m == 5.0
        assert meta.camera == CameraModel(focal_px=920.0, width_px=640, height_px=480)
        assert [f.id for f in meta.frames] == ["frame_0000", "frame_0001"]
        assert telemetry == tmp_path / "telemetry.csv"
        assert detections == tmp_path / "detections.json"

    def test_missing_key(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"depth_m": 5.0}), encoding="utf-8")
        with pytest.raises(ConfigError):
            load_sequence_config(path)

    def test_non_increasing_frame_times(self, tmp_path):
        path = self.write_config(
            tmp_path,
            frame_times=[{"id": "a", "t_s": 1.0}, {"id": "b", "t_s": 1.0}])
        with pytest.raises((ConfigError, ValueError)):
            load_sequence_config(path)

    def test_bad_depth(self, tmp_path):
        with pytest.raises((ConfigError, ValueError)):
            load_sequence_config(self.write_config(tmp_path, depth_m=-1.0))

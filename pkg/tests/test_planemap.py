from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from facadescan.errors import ExtentError, InvalidPitchError
from facadescan.geometry import PixelBox, PlaneBox, iou
from facadescan.ingest import CameraModel, Pose
from facadescan.planemap import (
    Extent,
    FacadeMetrics,
    MappingContext,
    area_ratio,
    auto_extent,
    count_storeys,
    dedup_plane,
    metrics_to_json,
    pitch_correction,
    project_box,
    project_point,
)

CAMERA = CameraModel(focal_px=920.0, width_px=1280, height_px=720)


def make_ctx(depth=5.0, beta0=0.0, pixel_x=False):
    return MappingContext(depth_m=depth, camera=CAMERA, beta0_rad=beta0,
                          pixel_x=pixel_x)


def make_pose(H, pitch=0.0, t=0.0):
    return Pose(t=t, altitude_m=H, roll_rad=0.0, pitch_rad=pitch, yaw_rad=0.0)


def plane(x, y, w, h, score=1.0, frames=()):
    return PlaneBox(x_m=x, y_m=y, w_m=w, h_m=h, score=score,
                    source_frames=tuple(frames))


class TestPitchCorrection:
    def test_zero_pitch(self):
        assert pitch_correction(5.0, 0.0) == 0.0

    def test_reference_pitch(self):
        # -5 * tan(0.12)
        assert pitch_correction(5.0, 0.12) == pytest.approx(
            -0.6028966860565265, abs=1e-12)

    def test_negative_pitch_flips_sign(self):
        # -3 * tan(-0.1)
        assert pitch_correction(3.0, -0.1) == pytest.approx(
            0.30100401625635165, abs=1e-12)

    def test_steep_pitch_rejected(self):
        with pytest.raises(InvalidPitchError):
            pitch_correction(5.0, math.pi / 2)

    @given(st.floats(min_value=0.1, max_value=50.0, allow_nan=False),
           st.floats(min_value=-1.2, max_value=1.2, allow_nan=False))
    @settings(max_examples=50)
    def test_odd_in_pitch(self, depth, beta):
        assert pitch_correction(depth, beta) == pytest.approx(
            -pitch_correction(depth, -beta), abs=1e-12)


class TestProjectPoint:
    def test_optical_axis_hits_altitude(self):
        ctx = make_ctx()
        pose = make_pose(H=10.0)
        assert project_point(CAMERA.height_px / 2, pose, ctx) == pytest.approx(10.0)

    def test_worked_example_no_pitch(self):
        # (720/2 - 0) * 5/920 + 4
        ctx = make_ctx()
        pose = make_pose(H=4.0)
        assert project_point(0.0, pose, ctx) == pytest.approx(
            5.956521739130435, abs=1e-9)

    def test_worked_example_with_pitch(self):
        ctx = make_ctx()
        pose = make_pose(H=4.0, pitch=0.12)
        assert project_point(0.0, pose, ctx) == pytest.approx(
            5.353625053073908, abs=1e-9)

    def test_pitch_relative_to_first_frame(self):
        # When the whole sequence shares the reference pitch, beta_rel
        # is 0 and the mapping reduces to plain similar triangles.
        ctx = make_ctx(beta0=0.12)
        pose = make_pose(H=4.0, pitch=0.12)
        assert project_point(0.0, pose, ctx) == pytest.approx(
            5.956521739130435, abs=1e-9)

    @given(st.floats(min_value=0.0, max_value=720.0, allow_nan=False),
           st.floats(min_value=1.0, max_value=50.0, allow_nan=False),
           st.floats(min_value=-2.0, max_value=2.0, allow_nan=False))
    @settings(max_examples=100)
    def test_altitude_equivariance(self, y_px, H, dH):
        ctx = make_ctx()
        base = project_point(y_px, make_pose(H=H), ctx)
        lifted = project_point(y_px, make_pose(H=H + dH), ctx)
        assert lifted - base == pytest.approx(dH, abs=1e-12)


class TestProjectBox:
    def test_metric_height_is_scale_times_pixel_height(self):
        # 92 px at D/f = 5/920 is exactly 0.5 m, whatever H and pitch.
        ctx = make_ctx()
        box = PixelBox(x=600, y=100, w=46, h=92, score=1.0)
        for H, pitch in [(4.0, 0.0), (9.0, 0.0), (4.0, 0.12), (7.0, -0.08)]:
            pb = project_box(box, make_pose(H=H, pitch=pitch), ctx)
            assert pb.h_m == pytest.approx(0.5, abs=1e-12)

    def test_centered_box_maps_to_plane_origin(self):
        ctx = make_ctx()
        box = PixelBox(x=CAMERA.width_px / 2 - 23, y=100, w=46, h=92, score=1.0)
        pb = project_box(box, make_pose(H=4.0), ctx)
        assert pb.x_m + pb.w_m / 2 == pytest.approx(0.0, abs=1e-12)

    def test_altitude_shift_moves_box_up(self):
        ctx = make_ctx()
        box = PixelBox(x=600, y=100, w=46, h=92, score=1.0)
        low = project_box(box, make_pose(H=4.0), ctx)
        high = project_box(box, make_pose(H=5.0), ctx)
        assert high.y_m - low.y_m == pytest.approx(1.0, abs=1e-12)
        assert high.x_m == low.x_m
        assert high.w_m == low.w_m

    def test_top_row_maps_to_larger_y(self):
        ctx = make_ctx()
        box = PixelBox(x=600, y=100, w=46, h=92, score=1.0)
        pb = project_box(box, make_pose(H=4.0), ctx)
        top_y = project_point(100.0, make_pose(H=4.0), ctx)
        bottom_y = project_point(192.0, make_pose(H=4.0), ctx)
        assert pb.y_m == pytest.approx(bottom_y, abs=1e-12)
        assert pb.y_m + pb.h_m == pytest.approx(top_y, abs=1e-12)

    def test_frame_id_recorded(self):
        ctx = make_ctx()
        box = PixelBox(x=600, y=100, w=46, h=92, score=0.75)
        pb = project_box(box, make_pose(H=4.0), ctx, frame_id="frame_0003")
        assert pb.source_frames == ("frame_0003",)
        assert pb.score == 0.75

    def test_pixel_x_mode_keeps_pixel_columns(self):
        ctx = make_ctx(pixel_x=True)
        box = PixelBox(x=600, y=100, w=46, h=92, score=1.0)
        pb = project_box(box, make_pose(H=4.0), ctx)
        assert pb.x_m == 600.0
        assert pb.w_m == 46.0

    @given(st.floats(min_value=0.0, max_value=600.0, allow_nan=False),
           st.floats(min_value=4.0, max_value=120.0, allow_nan=False),
           st.floats(min_value=3.0, max_value=40.0, allow_nan=False),
           st.floats(min_value=-0.3, max_value=0.3, allow_nan=False))
    @settings(max_examples=100)
    def test_height_independent_of_pose(self, y, h_px, H, pitch):
        ctx = make_ctx()
        box = PixelBox(x=600, y=y, w=40, h=h_px, score=1.0)
        pb = project_box(box, make_pose(H=H, pitch=pitch), ctx)
        assert pb.h_m == pytest.approx(h_px * 5.0 / 920.0, abs=1e-12)


class TestDedupPlane:
    def test_repeated_sightings_collapse(self):
        sightings = [plane(0, 4, 1.2, 1.5, score=0.9, frames=[f"frame_{k:04d}"])
                     for k in range(4)]
        survivors = dedup_plane(sightings, 0.3)
        assert len(survivors) == 1
        assert survivors[0].source_frames == (
            "frame_0000", "frame_0001", "frame_0002", "frame_0003")

    def test_jittered_sightings_union_frames(self):
        sightings = [
            plane(0.00, 4.00, 1.2, 1.5, score=0.8, frames=["a"]),
            plane(0.05, 4.03, 1.2, 1.5, score=0.9, frames=["b"]),
            plane(-0.04, 3.98, 1.2, 1.5, score=0.7, frames=["c"]),
        ]
        survivors = dedup_plane(sightings, 0.3)
        assert len(survivors) == 1
        assert survivors[0].source_frames == ("a", "b", "c")
        assert survivors[0].score == 0.9

    def test_separate_windows_all_kept(self):
        boxes = [plane(0, 4, 1.2, 1.5), plane(3, 4, 1.2, 1.5),
                 plane(0, 7, 1.2, 1.5)]
        assert len(dedup_plane(boxes, 0.3)) == 3

    def test_empty_input(self):
        assert dedup_plane([], 0.3) == []

    def test_equal_score_prefers_larger_box(self):
        clipped = plane(0, 4.6, 1.2, 0.9, score=1.0, frames=["edge"])
        full = plane(0, 4.0, 1.2, 1.5, score=1.0, frames=["mid"])
        survivors = dedup_plane([clipped, full], 0.3)
        assert len(survivors) == 1
        assert survivors[0].h_m == 1.5
        assert survivors[0].source_frames == ("edge", "mid")

    def test_survivors_respect_threshold(self):
        rng = np.random.default_rng(11)
        boxes = [plane(float(rng.uniform(0, 8)), float(rng.uniform(0, 8)),
                       float(rng.uniform(0.5, 2)), float(rng.uniform(0.5, 2)),
                       score=float(rng.uniform(0.5, 1.0)))
                 for _ in range(40)]
        survivors = dedup_plane(boxes, 0.3)
        for i in range(len(survivors)):
            for j in range(i + 1, len(survivors)):
                assert iou(survivors[i], survivors[j]) <= 0.3

    def test_order_invariant(self):
        rng = np.random.default_rng(12)
        boxes = [plane(float(rng.uniform(0, 6)), float(rng.uniform(0, 6)),
                       float(rng.uniform(0.5, 2)), float(rng.uniform(0.5, 2)),
                       score=float(rng.uniform(0.5, 1.0)), frames=[f"f{k}"])
                 for k in range(25)]
        forward = dedup_plane(boxes, 0.3)
        backward = dedup_plane(boxes[::-1], 0.3)
        assert forward == backward


class TestCountStoreys:
    def test_single_box(self):
        result = count_storeys([plane(0, 4, 1.2, 1.5)])
        assert result.storey_count == 1
        assert result.windows_per_storey == (1,)

    def test_grid_four_by_five(self):
        boxes = [plane(2.0 * c, 0.8 + 2.0 * s, 1.2, 1.5)
                 for s in range(4) for c in range(5)]
        result = count_storeys(boxes)
        assert result.storey_count == 4
        assert result.windows_per_storey == (5, 5, 5, 5)

    def test_small_overlap_splits_storeys(self):
        # Intervals [0,1] and [0.9,1.9]: overlap 0.1 < half of 1.0.
        low = plane(0, 0, 1.0, 1.0)
        high = plane(3, 0.9, 1.0, 1.0)
        result = count_storeys([low, high], band_overlap_min=0.5)
        assert result.storey_count == 2
        assert result.windows_per_storey == (1, 1)

    def test_majority_overlap_merges(self):
        low = plane(0, 0, 1.0, 1.0)
        high = plane(3, 0.3, 1.0, 1.0)
        result = count_storeys([low, high], band_overlap_min=0.5)
        assert result.storey_count == 1
        assert result.windows_per_storey == (2,)

    def test_empty(self):
        result = count_storeys([])
        assert result.storey_count == 0
        assert result.windows_per_storey == ()
        assert result.storey_bands == ()

    def test_bands_cover_their_boxes(self):
        boxes = [plane(2.0 * c, 0.8 + 2.0 * s, 1.2, 1.5)
                 for s in range(3) for c in range(4)]
        result = count_storeys(boxes)
        for (lo, hi), n in zip(result.storey_bands, result.windows_per_storey):
            members = [b for b in boxes if b.y_m >= lo - 1e-9
                       and b.y_m + b.h_m <= hi + 1e-9]
            assert len(members) == n

    @given(st.randoms(use_true_random=False),
           st.floats(min_value=-3.0, max_value=30.0, allow_nan=False))
    @settings(max_examples=40)
    def test_permutation_and_translation_invariant(self, rnd, dy):
        boxes = [plane(2.0 * c, 1.0 + 2.2 * s, 1.2, 1.5)
                 for s in range(3) for c in range(3)]
        base = count_storeys(boxes)
        shuffled = list(boxes)
        rnd.shuffle(shuffled)
        # Keep the translated grid above the ground line.
        lifted = [plane(b.x_m, b.y_m + max(dy, -2.0), b.w_m, b.h_m)
                  for b in shuffled]
        moved = count_storeys(lifted)
        assert moved.storey_count == base.storey_count
        assert moved.windows_per_storey == base.windows_per_storey


class TestAreaRatio:
    def test_twenty_windows_on_known_facade(self):
        # 20 windows of 1.5 x 1.2 on 20 x 10: 36/200.
        boxes = [plane(0.1 + 1.9 * c, 0.5 + 2.2 * s, 1.5, 1.2)
                 for s in range(4) for c in range(5)]
        extent = Extent(x_m=0.0, y_m=0.0, w_m=20.0, h_m=10.0)
        assert area_ratio(boxes, extent) == pytest.approx(0.18, abs=1e-12)

    def test_no_windows(self):
        extent = Extent(x_m=0.0, y_m=0.0, w_m=20.0, h_m=10.0)
        assert area_ratio([], extent) == 0.0

    def test_zero_area_extent_rejected(self):
        with pytest.raises(ExtentError):
            area_ratio([], Extent(x_m=0.0, y_m=0.0, w_m=0.0, h_m=10.0))

    def test_box_outside_extent_warns(self):
        boxes = [plane(25.0, 4.0, 1.2, 1.5)]
        extent = Extent(x_m=0.0, y_m=0.0, w_m=20.0, h_m=10.0)
        with pytest.warns(RuntimeWarning):
            area_ratio(boxes, extent)

    def test_auto_extent_pads_content(self):
        boxes = [plane(0, 1, 1.2, 1.5), plane(3, 1, 1.2, 1.5)]
        extent = auto_extent(boxes, wall_margin=0.5)
        assert extent.x_m == pytest.approx(-0.5)
        assert extent.w_m == pytest.approx(5.2)
        assert extent.y_m == pytest.approx(0.5)
        assert extent.h_m == pytest.approx(2.5)

    def test_auto_extent_empty_rejected(self):
        with pytest.raises(ExtentError):
            auto_extent([])


class TestFacadeMetricsAndJson:
    def make_metrics(self):
        boxes = [plane(0, 1, 1.2, 1.5, frames=["f0"]),
                 plane(3, 1, 1.2, 1.5, frames=["f0", "f1"])]
        extent = auto_extent(boxes)
        metrics = FacadeMetrics(
            window_count=2, storey_count=1, windows_per_storey=(2,),
            area_ratio=area_ratio(boxes, extent), facade_extent=extent)
        return metrics, boxes

    def test_inconsistent_counts_rejected(self):
        extent = Extent(x_m=0, y_m=0, w_m=10, h_m=10)
        with pytest.raises(ValueError):
            FacadeMetrics(window_count=3, storey_count=1,
                          windows_per_storey=(2,), area_ratio=0.1,
                          facade_extent=extent)

    def test_json_schema(self):
        metrics, boxes = self.make_metrics()
        doc = json.loads(metrics_to_json(metrics, boxes, ((1.0, 2.5),)))
        assert doc["window_count"] == 2
        assert doc["storey_count"] == 1
        assert doc["windows_per_storey"] == [2]
        assert set(doc["facade_extent"]) == {"w_m", "h_m"}
        assert len(doc["unique_windows"]) == 2
        first = doc["unique_windows"][0]
        assert set(first) == {"x_m", "y_m", "w_m", "h_m", "source_frames"}
        assert doc["storey_bands"] == [[1.0, 2.5]]

    def test_json_deterministic(self):
        metrics, boxes = self.make_metrics()
        a = metrics_to_json(metrics, boxes, ((1.0, 2.5),))
        b = metrics_to_json(metrics, boxes, ((1.0, 2.5),))
        assert a == b

"""Oracle renderer, noise model, detection synthesis, accuracy harness.

Key hand-derived values:
  - sphere center (0,0,5) radius 0.5 seen down the axis: first hit at
    z = 5 - 0.5 = 4.5
  - silhouette half-width of that sphere at fx=700:
    fx * r / sqrt(z^2 - r^2) = 700*0.5/sqrt(24.75) = 70.3528 px
  - noise sigma_Z = Z^2 * disparity_std / (fx * baseline), so the same
    Gaussian draw at Z=10 is exactly 4x the draw at Z=5.
"""

import math

import numpy as np
import pytest

from scenefuse.errors import DomainError
from scenefuse.geometry import (
    CameraIntrinsics,
    Pixel,
    RigidTransform,
    backproject_pixel,
    rotation_y,
)
from scenefuse.sim import (
    AccuracyCondition,
    Actor,
    Box,
    NoiseModel,
    Scene,
    SceneCamera,
    Sphere,
    apply_noise,
    default_accuracy_config,
    default_station_fan,
    error_color,
    ground_truth_positions,
    measure_station,
    render_depth,
    run_accuracy_experiment,
    station_noise_sweep,
    synth_detections,
)


def _camera(width=200, height=200, focal=700.0) -> SceneCamera:
    k = CameraIntrinsics(fx=focal, fy=focal, cx=width / 2, cy=height / 2,
                         width=width, height=height)
    return SceneCamera(k, RigidTransform.identity())


def _scene(actors, camera=None, duration=0.0) -> Scene:
    return Scene(actors=actors, cameras=[camera or _camera()],
                 duration=duration, frame_rate=10.0)


class TestRenderDepth:
    def test_sphere_on_axis_depth(self):
        scene = _scene([Actor(Sphere([0, 0, 5.0], 0.5), class_id=1)])
        depth = render_depth(scene, 0, 0.0)
        k = scene.cameras[0].intrinsics
        assert depth.values[int(k.cy), int(k.cx)] == pytest.approx(4.5, abs=1e-6)

    def test_empty_scene_all_invalid(self):
        scene = _scene([])
        depth = render_depth(scene, 0, 0.0)
        assert not depth.valid_mask().any()

    def test_nearest_hit_wins(self):
        scene = _scene([
            Actor(Sphere([0, 0, 8.0], 0.5), class_id=1),
            Actor(Sphere([0, 0, 5.0], 0.5), class_id=2),
        ])
        depth = render_depth(scene, 0, 0.0)
        k = scene.cameras[0].intrinsics
        assert depth.values[int(k.cy), int(k.cx)] == pytest.approx(4.5, abs=1e-6)

    def test_box_front_face_depth(self):
        box = Box([-0.5, -0.5, 4.0], [0.5, 0.5, 4.6])
        scene = _scene([Actor(box, class_id=1)])
        depth = render_depth(scene, 0, 0.0)
        k = scene.cameras[0].intrinsics
        assert depth.values[int(k.cy), int(k.cx)] == pytest.approx(4.0, abs=1e-6)

    def test_depth_beyond_range_invalid(self):
        scene = _scene([Actor(Sphere([0, 0, 30.0], 0.5), class_id=1)])
        depth = render_depth(scene, 0, 0.0)
        assert not depth.valid_mask().any()

    def test_time_outside_duration_rejected(self):
        scene = _scene([], duration=1.0)
        with pytest.raises(DomainError):
            render_depth(scene, 0, 2.0)

    def test_oracle_agrees_with_backprojection(self):
        # Every rendered pixel back-projects onto the sphere surface.
        center = np.array([0.4, -0.2, 6.0])
        radius = 0.7
        scene = _scene([Actor(Sphere(center, radius), class_id=1)])
        depth = render_depth(scene, 0, 0.0)
        k = scene.cameras[0].intrinsics
        mask = depth.valid_mask()
        vs, us = np.nonzero(mask)
        for v, u in zip(vs[::97], us[::97]):
            p = backproject_pixel(Pixel(float(u), float(v)),
                                  float(depth.values[v, u]), k)
            assert abs(np.linalg.norm(np.asarray(p) - center) - radius) < 1e-4

    def test_rotated_camera_sees_side_actor(self):
        # Actor placed off-axis becomes centered when the camera yaws to it.
        yaw = math.atan2(3.0, 4.0)
        cam = SceneCamera(
            _camera().intrinsics,
            RigidTransform(rotation_y(yaw), np.zeros(3)),
        )
        scene = _scene([Actor(Sphere([3.0, 0.0, 4.0], 0.4), class_id=1)], camera=cam)
        depth = render_depth(scene, 0, 0.0)
        k = cam.intrinsics
        expected = 5.0 - 0.4  # |center| = 5, front surface along the view ray
        assert depth.values[int(k.cy), int(k.cx)] == pytest.approx(expected, abs=1e-6)

    def test_box_straddling_camera_plane_still_renders(self):
        # A box enclosing the camera origin has no finite silhouette, so
        # the renderer falls back to a full-frame cast and hits the exit
        # face; the detector omits the actor entirely.
        box = Box([-2.0, -2.0, -1.0], [2.0, 2.0, 3.0])
        scene = _scene([Actor(box, class_id=1)])
        depth = render_depth(scene, 0, 0.0)
        k = scene.cameras[0].intrinsics
        assert depth.values[int(k.cy), int(k.cx)] == pytest.approx(3.0, abs=1e-6)
        assert synth_detections(scene, 0, 0.0) == []

    def test_trajectory_moves_actor(self):
        actor = Actor(Sphere([0, 0, 5.0], 0.5), class_id=1,
                      trajectory=[(0.0, [0, 0, 5.0]), (1.0, [0, 0, 7.0])])
        scene = _scene([actor], duration=1.0)
        k = scene.cameras[0].intrinsics
        d0 = render_depth(scene, 0, 0.0)
        d1 = render_depth(scene, 0, 1.0)
        dh = render_depth(scene, 0, 0.5)
        assert d0.values[100, 100] == pytest.approx(4.5, abs=1e-6)
        assert d1.values[100, 100] == pytest.approx(6.5, abs=1e-6)
        assert dh.values[100, 100] == pytest.approx(5.5, abs=1e-6)


class TestNoise:
    def test_disabled_noise_identity(self):
        scene = _scene([Actor(Sphere([0, 0, 5.0], 1.0), class_id=1)])
        depth = render_depth(scene, 0, 0.0)
        k = scene.cameras[0].intrinsics
        out = apply_noise(depth, k, NoiseModel(enabled=False), seed=1)
        assert np.array_equal(out.values, depth.values)
        out2 = apply_noise(depth, k, NoiseModel(disparity_std=0.0, enabled=True), seed=1)
        assert np.array_equal(out2.values, depth.values)

    def test_same_seed_same_output(self):
        scene = _scene([Actor(Sphere([0, 0, 5.0], 1.0), class_id=1)])
        depth = render_depth(scene, 0, 0.0)
        k = scene.cameras[0].intrinsics
        n = NoiseModel(enabled=True)
        a = apply_noise(depth, k, n, seed=42)
        b = apply_noise(depth, k, n, seed=42)
        c = apply_noise(depth, k, n, seed=43)
        assert np.array_equal(a.values, b.values)
        assert not np.array_equal(a.values, c.values)

    def test_sigma_scales_with_depth_squared(self):
        # Same rng stream, sigma ~ Z^2: perturbations at Z=10 are exactly
        # 4x the perturbations at Z=5.
        from scenefuse.geometry import DepthMap

        k = CameraIntrinsics(700, 700, 100, 100, 200, 200)
        n = NoiseModel(enabled=True)
        d5 = apply_noise(DepthMap.full(200, 200, 5.0), k, n, seed=7)
        d10 = apply_noise(DepthMap.full(200, 200, 10.0), k, n, seed=7)
        delta5 = d5.values.astype(np.float64) - 5.0
        delta10 = d10.values.astype(np.float64) - 10.0
        # float32 storage rounds each map near its own magnitude, so only
        # compare where the perturbation clears the quantization step
        big = np.abs(delta5) > 0.01
        ratio = delta10[big] / delta5[big]
        assert np.allclose(ratio, 4.0, atol=1e-3)
        assert np.std(delta10) == pytest.approx(4 * np.std(delta5), rel=1e-3)

    def test_invalid_pixels_untouched(self):
        from scenefuse.geometry import DepthMap

        values = np.zeros((4, 4), dtype=np.float32)
        values[0, 0] = 5.0
        k = CameraIntrinsics(700, 700, 2, 2, 4, 4)
        out = apply_noise(DepthMap(4, 4, values), k, NoiseModel(enabled=True), seed=1)
        assert out.values[1, 1] == 0.0
        assert out.values[0, 0] != 5.0


class TestSynthDetections:
    def test_axis_sphere_bbox_centered_and_sized(self):
        scene = _scene([Actor(Sphere([0, 0, 5.0], 0.5), class_id=3)])
        dets = synth_detections(scene, 0, 0.0)
        assert len(dets) == 1
        det = dets[0]
        x, y, w, h = det.bbox
        k = scene.cameras[0].intrinsics
        cx, cy = k.cx, k.cy
        assert x + w / 2 == pytest.approx(cx, abs=1e-6)
        assert y + h / 2 == pytest.approx(cy, abs=1e-6)
        half_width = 700 * 0.5 / math.sqrt(5.0 ** 2 - 0.5 ** 2)
        assert w / 2 == pytest.approx(half_width, abs=1e-3)
        assert det.confidence == 1.0
        assert det.class_id == 3

    def test_behind_camera_omitted(self):
        scene = _scene([Actor(Sphere([0, 0, -5.0], 0.5), class_id=1)])
        assert synth_detections(scene, 0, 0.0) == []

    def test_outside_frustum_omitted(self):
        scene = _scene([Actor(Sphere([50.0, 0, 5.0], 0.5), class_id=1)])
        assert synth_detections(scene, 0, 0.0) == []

    def test_partial_overlap_clamped(self):
        cam = _camera(width=200, height=200, focal=700.0)
        half_fov_x = 100 / 700.0  # tan of the half angle
        x_edge = 5.0 * half_fov_x
        scene = _scene([Actor(Sphere([x_edge, 0, 5.0], 0.5), class_id=1)], camera=cam)
        dets = synth_detections(scene, 0, 0.0)
        assert len(dets) == 1
        x, y, w, h = dets[0].bbox
        assert x + w <= 200.0 + 1e-9

    def test_box_bbox_matches_corner_projection(self):
        box = Box([0.5, -0.3, 4.0], [1.1, 0.4, 4.8])
        scene = _scene([Actor(box, class_id=1)])
        k = scene.cameras[0].intrinsics
        dets = synth_detections(scene, 0, 0.0)
        assert len(dets) == 1
        corners = np.array([
            [x, y, z]
            for x in (0.5, 1.1) for y in (-0.3, 0.4) for z in (4.0, 4.8)
        ])
        us = k.fx * corners[:, 0] / corners[:, 2] + k.cx
        vs = k.fy * corners[:, 1] / corners[:, 2] + k.cy
        x, y, w, h = dets[0].bbox
        assert x == pytest.approx(max(us.min(), 0.0), abs=1e-9)
        assert x + w == pytest.approx(min(us.max(), 200.0), abs=1e-9)
        assert y == pytest.approx(max(vs.min(), 0.0), abs=1e-9)
        assert y + h == pytest.approx(min(vs.max(), 200.0), abs=1e-9)

    def test_bbox_covers_rendered_silhouette(self):
        # The synthesized bbox must contain every rendered hit pixel.
        scene = _scene([Actor(Sphere([0.8, -0.5, 6.0], 0.6), class_id=1)])
        depth = render_depth(scene, 0, 0.0)
        det = synth_detections(scene, 0, 0.0)[0]
        vs, us = np.nonzero(depth.valid_mask())
        x, y, w, h = det.bbox
        assert us.min() >= math.floor(x) and us.max() <= math.ceil(x + w)
        assert vs.min() >= math.floor(y) and vs.max() <= math.ceil(y + h)

    def test_ground_truth_positions(self):
        actor = Actor(Sphere([0, 0, 5.0], 0.5), class_id=9,
                      trajectory=[(0.0, [0, 0, 5.0]), (2.0, [2.0, 0, 5.0])])
        scene = _scene([actor], duration=2.0)
        gt = ground_truth_positions(scene, 1.0)
        assert gt[0][0] == 9
        assert np.allclose(gt[0][1], [1.0, 0, 5.0])


class TestErrorColor:
    def test_thresholds(self):
        assert error_color(0.0) == (0, 255, 0)
        assert error_color(0.30) == (0, 255, 0)
        assert error_color(1.00) == (255, 0, 0)
        assert error_color(5.0) == (255, 0, 0)

    def test_blend_midpoint(self):
        # halfway between 0.3 and 1.0
        r, g, b = error_color(0.65)
        assert (r, g, b) == (128, 127, 0)

    def test_blend_monotone(self):
        reds = [error_color(e)[0] for e in np.linspace(0.3, 1.0, 20)]
        assert all(b >= a for a, b in zip(reds, reds[1:]))


class TestStationFan:
    def test_max_range_is_12_5(self):
        ranges = [float(np.linalg.norm(s.position)) for s in default_station_fan()]
        assert max(ranges) == pytest.approx(12.5, abs=0.01)

    def test_depths_span_the_scene(self):
        depths = sorted({float(s.position[2]) for s in default_station_fan()})
        assert depths[0] == pytest.approx(2.0)
        assert depths[-1] > 12.0
        assert len(depths) >= 8

    def test_angular_separation_from_center_subject(self):
        # Silhouettes must not overlap: per-station azimuth cones (with the
        # panel half width) stay clear of the fixed subject's cone.
        config = default_accuracy_config()
        center = config.center_position
        half_w = config.subject_size[0] / 2
        center_az = math.atan2(center[0], center[2])
        center_cone = math.atan2(half_w, float(np.linalg.norm(center)))
        for st in default_station_fan():
            az = math.atan2(st.position[0], st.position[2])
            cone = math.atan2(half_w, float(np.linalg.norm(st.position)))
            assert abs(az - center_az) > center_cone + cone, st.label


class TestAccuracyExperiment:
    def _small_condition(self, noise=False, seed=0):
        return AccuracyCondition(
            name="test", width=640, height=360, focal=350.0,
            noise=NoiseModel(enabled=noise), seed=seed,
        )

    def test_noise_free_all_green(self):
        config = default_accuracy_config(noise_enabled=False)
        config.conditions = [self._small_condition(noise=False)]
        outcome = run_accuracy_experiment(config)
        for row in outcome.reports[0].rows:
            assert row.abs_error is not None, row.label
            assert row.abs_error < 0.30, (row.label, row.abs_error)
            assert row.color == (0, 255, 0)

    def test_nearest_station_within_pixel_quantization(self):
        # The only noise-free error source is bbox pixel quantization:
        # bound it by 2 px of lateral displacement at each subject's depth.
        config = default_accuracy_config(noise_enabled=False)
        cond = self._small_condition(noise=False)
        nearest = min(default_station_fan(), key=lambda s: np.linalg.norm(s.position))
        result = measure_station(config, nearest, cond)
        z1 = nearest.position[2]
        z2 = config.center_position[2]
        bound = 2.0 * (z1 + z2) / cond.focal
        assert result.measured_distance is not None
        assert abs(result.measured_distance - result.true_distance) < bound

    def test_average_panel_included(self):
        config = default_accuracy_config(noise_enabled=False)
        config.conditions = [
            self._small_condition(noise=False),
            AccuracyCondition(name="pitch", width=640, height=360, focal=350.0,
                              noise=NoiseModel(enabled=False), camera_pitch_deg=5.0),
        ]
        outcome = run_accuracy_experiment(config)
        assert [r.condition for r in outcome.reports] == ["test", "pitch"]
        assert outcome.average.condition == "average"
        assert len(outcome.average.rows) == len(config.stations)

    def test_csv_deterministic_and_parseable(self):
        config = default_accuracy_config(noise_enabled=True)
        config.conditions = [self._small_condition(noise=True, seed=5)]
        a = run_accuracy_experiment(config).reports[0].to_csv_text()
        b = run_accuracy_experiment(config).reports[0].to_csv_text()
        assert a == b
        lines = a.strip().splitlines()
        assert lines[0].startswith("station,")
        assert len(lines) == 1 + len(config.stations)

    def test_ppm_well_formed(self):
        config = default_accuracy_config(noise_enabled=False)
        config.conditions = [self._small_condition()]
        ppm = run_accuracy_experiment(config).reports[0].to_ppm_bytes()
        header, *rest = ppm.decode().split("\n")
        magic, w, h, maxval = header.split()
        assert magic == "P3"
        payload = " ".join(rest).split()
        assert len(payload) == int(w) * int(h) * 3

    def test_noise_sweep_errors_grow_with_depth(self):
        config = default_accuracy_config()
        cond = self._small_condition(noise=True, seed=11)
        rows = station_noise_sweep(config, cond, n_seeds=30)
        depths = [r["depth_m"] for r in rows]
        errors = [r["mean_abs_error"] for r in rows]
        assert all(e is not None for e in errors)
        from scipy.stats import spearmanr

        rho = spearmanr(depths, errors).statistic
        assert rho > 0.9

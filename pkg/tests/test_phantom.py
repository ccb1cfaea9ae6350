import json
import math

import numpy as np
import pytest

from dare.errors import InvalidArgumentError
from dare.evaluation import ncc
from dare.geometry import Pose, Quaternion
from dare.phantom import (
    PhantomScene,
    Slab,
    Sphere,
    SweepPlan,
    Tube,
    default_benchmark_scene,
    ground_truth_reslice,
    load_scene_file,
    merge_recordings,
    opposing_sweeps_fixture,
    render_frame,
    render_intensities,
    scene_from_dict,
    simulate_sweep,
)
from dare.reconstruct import reconstruct_volume
from dare.reslice import ReslicePlane, ResliceConfig, reslice


def quat_deg(axis, deg):
    return Quaternion.from_axis_angle(axis, math.radians(deg))


def single_pixel_frame(scene, pose):
    return render_intensities(scene, pose, 1, 1, (0.1, 0.1), noise=False)[0, 0]


class TestRenderFrame:
    def test_empty_scene_uniform_background(self):
        scene = PhantomScene(background_intensity=33.0)
        img = render_intensities(scene, Pose.identity(), 16, 12, (0.2, 0.2), noise=False)
        assert img.shape == (12, 16)
        assert (img == 33).all()

    def test_perpendicular_beam_full_wall_intensity(self):
        # beam +y dead-on against a slab facing -y: contribution is the full wall value
        slab = Slab(point=(0, 5.0, 0), normal=(0, -1, 0), intensity=150.0)
        scene = PhantomScene(background_intensity=20.0, inclusions=(slab,))
        pose = Pose(Quaternion.identity(), (0.0, 5.0, 0.0))  # pixel sits on the sheet
        assert single_pixel_frame(scene, pose) == 170

    def test_oblique_beam_cos_squared(self):
        # 60 degrees between beam and wall normal, exponent 2 -> factor 0.25
        slab = Slab(point=(0, 5.0, 0), normal=(0, -1, 0), intensity=200.0)
        scene = PhantomScene(background_intensity=20.0, specular_exponent=2.0, inclusions=(slab,))
        pose = Pose(quat_deg((0, 0, 1), 60), (0.0, 5.0, 0.0))
        expected = 20.0 + 200.0 * 0.25
        assert single_pixel_frame(scene, pose) == round(expected)

    def test_two_sided_slab(self):
        slab = Slab(point=(0, 5.0, 0), normal=(0, -1, 0), intensity=50.0, back_intensity=200.0)
        scene = PhantomScene(background_intensity=0.0, inclusions=(slab,))
        front = single_pixel_frame(scene, Pose(Quaternion.identity(), (0, 5.0, 0)))
        back_pose = Pose(quat_deg((1, 0, 0), 180), (0.0, 5.0, 0.0))
        back = single_pixel_frame(scene, back_pose)
        assert front == 50 and back == 200

    def test_speckle_determinism_per_frame_key(self):
        scene = PhantomScene(background_intensity=100.0, speckle_amplitude=5.0, speckle_seed=3)
        a = render_intensities(scene, Pose.identity(), 8, 8, (0.2, 0.2), frame_key=4)
        b = render_intensities(scene, Pose.identity(), 8, 8, (0.2, 0.2), frame_key=4)
        c = render_intensities(scene, Pose.identity(), 8, 8, (0.2, 0.2), frame_key=5)
        np.testing.assert_array_equal(a, b)
        assert (a != c).any()

    def test_render_frame_wraps_tracked_frame(self):
        scene = PhantomScene(background_intensity=10.0)
        f = render_frame(scene, Pose.identity(), 4, 3, (0.2, 0.2), timestamp=1.5)
        assert f.width == 4 and f.height == 3 and f.timestamp == 1.5


class TestSimulateSweep:
    def test_two_frame_plan_timestamps(self):
        scene = PhantomScene()
        plan = SweepPlan.linear(Pose.identity(), Pose(Quaternion.identity(), (0, 0, 1)), 2,
                                frame_rate=25.0)
        rec = simulate_sweep(scene, plan)
        assert rec.frame_count == 2
        np.testing.assert_allclose(rec.image_timestamps, [0.0, 0.04], atol=1e-12)

    def test_bit_identical_for_same_seed(self):
        scene = PhantomScene(background_intensity=80.0, speckle_amplitude=4.0, speckle_seed=11)
        plan = SweepPlan.linear(Pose.identity(), Pose(Quaternion.identity(), (0, 0, 2)), 5)
        a = simulate_sweep(scene, plan)
        b = simulate_sweep(scene, plan)
        np.testing.assert_array_equal(a.images, b.images)

    def test_opposing_fixture_reproduces_50_200(self):
        scene, up, down = opposing_sweeps_fixture(frame_count=4, width=8, height=8)
        rec_up = simulate_sweep(scene, up)
        rec_down = simulate_sweep(scene, down)
        assert (rec_up.images == 50).all()
        assert (rec_down.images == 200).all()

    def test_directional_asymmetry_precondition(self):
        # same scene, same world coverage, opposite normals -> frames differ
        scene, up, down = opposing_sweeps_fixture(frame_count=4, width=8, height=8)
        a = simulate_sweep(scene, up).images.astype(float)
        b = simulate_sweep(scene, down).images.astype(float)
        assert np.abs(a - b).mean() > 0.0

    def test_plan_needs_two_frames(self):
        with pytest.raises(InvalidArgumentError):
            SweepPlan(poses=(Pose.identity(),))

    def test_merge_requires_same_geometry(self):
        scene = PhantomScene()
        p1 = SweepPlan.linear(Pose.identity(), Pose(Quaternion.identity(), (0, 0, 1)), 2,
                              width=8, height=8)
        p2 = SweepPlan.linear(Pose.identity(), Pose(Quaternion.identity(), (0, 0, 1)), 2,
                              width=9, height=8)
        with pytest.raises(InvalidArgumentError):
            merge_recordings([simulate_sweep(scene, p1), simulate_sweep(scene, p2)])


class TestGroundTruth:
    def test_matches_render_frame_at_same_pose(self):
        doc = default_benchmark_scene(speckle=0.0)
        scene, sweeps = scene_from_dict(doc)
        pose = Pose(quat_deg((1, 0, 0), 10), (1.0, 0.0, 8.0))
        plane = ReslicePlane(pose, 32, 24, (0.25, 0.25))
        truth = ground_truth_reslice(scene, plane)
        frame = render_intensities(scene, pose, 32, 24, (0.25, 0.25), noise=False)
        np.testing.assert_array_equal(truth.pixels, frame)
        assert truth.coverage.all()

    def test_empty_scene_uniform(self):
        truth = ground_truth_reslice(PhantomScene(background_intensity=9.0),
                                     ReslicePlane(Pose.identity(), 8, 8, (0.2, 0.2)))
        assert (truth.pixels == 9).all()

    def test_tube_cross_section_ring_radius(self):
        # plane perpendicular to the tube axis shows a ring of the tube radius
        radius = 3.0
        tube = Tube(point=(8.0, 8.0, 0.0), direction=(0, 0, 1), radius=radius,
                    intensity=200.0, wall_thickness=0.5)
        scene = PhantomScene(background_intensity=0.0, inclusions=(tube,))
        pitch = 0.125
        plane = ReslicePlane(Pose.identity(), 128, 128, (pitch, pitch))
        img = ground_truth_reslice(scene, plane).pixels
        bright = np.argwhere(img > 10)
        dist_mm = np.hypot(bright[:, 0] * pitch - 8.0, bright[:, 1] * pitch - 8.0)
        assert abs(dist_mm.max() - radius) <= 0.5 * 0.5 + pitch  # shell + one pixel
        assert abs(dist_mm.min() - radius) <= 0.5 * 0.5 + pitch
        # the ring's mean radius nails the analytic radius within a pixel
        assert abs(dist_mm.mean() - radius) <= pitch

    def test_parallel_sweep_roundtrip_ncc_above_0_9(self):
        doc = default_benchmark_scene(speckle=0.0)
        scene, sweeps = scene_from_dict(doc)
        _, plan = sweeps["recon_a"]
        rec = simulate_sweep(scene, plan)
        vol = reconstruct_volume(rec, voxel_size=0.25, margin=1.0)
        pose = plan.poses[len(plan.poses) // 2]
        plane = ReslicePlane(pose, plan.width, plan.height, plan.pixel_pitch)
        out = reslice(vol, plane, ResliceConfig(interp_radius=0.25))
        truth = ground_truth_reslice(scene, plane)
        value = ncc(out.pixels, truth.pixels, out.coverage, truth.coverage)
        assert value > 0.9


class TestSceneFiles:
    def test_round_trip_through_json(self, tmp_path):
        doc = default_benchmark_scene()
        path = tmp_path / "scene.json"
        path.write_text(json.dumps(doc))
        scene, sweeps = load_scene_file(path)
        assert len(scene.inclusions) == 4
        assert {r for r, _ in sweeps.values()} == {"reconstruction", "evaluation"}
        assert sum(1 for r, _ in sweeps.values() if r == "evaluation") == 1
        _, plan = sweeps["evaluation"]
        assert len(plan.poses) == 56

    def test_unknown_primitive_rejected(self):
        with pytest.raises(InvalidArgumentError, match="unknown primitive"):
            scene_from_dict({"inclusions": [{"type": "torus"}]})

    def test_invalid_json_reports_line(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text('{\n  "background_intensity": }\n')
        with pytest.raises(InvalidArgumentError, match="broken.json:2"):
            load_scene_file(path)

    def test_axis_angle_pose_parsing(self):
        scene, sweeps = scene_from_dict({
            "sweeps": [{
                "name": "s", "frames": 2, "width": 8, "height": 8,
                "start": {"translation": [0, 0, 0], "axis": [1, 0, 0], "angle_deg": 90},
                "end": {"translation": [0, 0, 1], "axis": [1, 0, 0], "angle_deg": 90},
            }]
        })
        _, plan = sweeps["s"]
        assert plan.poses[0].rotation.angle_to(quat_deg((1, 0, 0), 90)) <= 1e-12


class TestSphere:
    def test_sphere_shell_visible_only_near_radius(self):
        sphere = Sphere(center=(5.0, 5.0, 0.0), radius=2.0, intensity=100.0, wall_thickness=0.4)
        scene = PhantomScene(background_intensity=0.0, inclusions=(sphere,))
        img = render_intensities(scene, Pose.identity(), 80, 80, (0.125, 0.125), noise=False)
        ys, xs = np.nonzero(img)
        d = np.hypot(xs * 0.125 - 5.0, ys * 0.125 - 5.0)
        assert len(d) > 0
        assert np.all(np.abs(d - 2.0) <= 0.2 + 0.125 * 1.5)

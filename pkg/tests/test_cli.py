import json
import os

import numpy as np
import pytest

from dare.cli import main
from dare.geometry import Pose, Quaternion
from dare.pgm import read_pbm, read_pgm
from dare.phantom import PhantomScene, SweepPlan, simulate_sweep
from dare.reconstruct import save_sweep
from dare.reslice import ReslicePlane, ResliceConfig, reslice
from dare.volume import load_volume


@pytest.fixture(scope="module")
def sweep_dir(tmp_path_factory):
    scene = PhantomScene(background_intensity=60.0, speckle_amplitude=3.0, speckle_seed=2)
    plan = SweepPlan.linear(
        Pose.identity(), Pose(Quaternion.identity(), (0, 0, 6.0)), 25,
        width=32, height=32, pixel_pitch=(0.25, 0.25),
    )
    rec = simulate_sweep(scene, plan)
    path = tmp_path_factory.mktemp("sweeps") / "demo.daresweep"
    save_sweep(rec, path)
    return path


def run(args, capsys):
    code = main([str(a) for a in args])
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestReconstructCommand:
    def test_writes_volume_and_prints_summary(self, sweep_dir, tmp_path, capsys):
        out = tmp_path / "v.darevol"
        code, stdout, _ = run(["reconstruct", sweep_dir, "-o", out], capsys)
        assert code == 0
        assert out.exists()
        assert "samples" in stdout and "dims" in stdout
        v = load_volume(out)
        assert v.sample_count == 25 * 32 * 32

    def test_rerun_bit_identical(self, sweep_dir, tmp_path, capsys):
        a, b = tmp_path / "a.darevol", tmp_path / "b.darevol"
        assert run(["reconstruct", sweep_dir, "-o", a], capsys)[0] == 0
        assert run(["reconstruct", sweep_dir, "-o", b], capsys)[0] == 0
        assert a.read_bytes() == b.read_bytes()

    def test_doubling_voxel_size_halves_dims(self, sweep_dir, tmp_path, capsys):
        a, b = tmp_path / "a.darevol", tmp_path / "b.darevol"
        run(["reconstruct", sweep_dir, "--voxel-size", 0.125, "-o", a], capsys)
        run(["reconstruct", sweep_dir, "--voxel-size", 0.25, "-o", b], capsys)
        da, db = load_volume(a).dims, load_volume(b).dims
        for fine, coarse in zip(da, db):
            assert abs(fine / 2 - coarse) <= 1.0

    def test_missing_pose_file_fails_with_its_name(self, sweep_dir, tmp_path, capsys):
        broken = tmp_path / "broken.daresweep"
        import shutil

        shutil.copytree(sweep_dir, broken)
        (broken / "poses.txt").unlink()
        code, _, stderr = run(["reconstruct", broken, "-o", tmp_path / "x.darevol"], capsys)
        assert code != 0
        assert "poses.txt" in stderr

    def test_baseline_out(self, sweep_dir, tmp_path, capsys):
        out = tmp_path / "v.darevol"
        base = tmp_path / "v.scalarvol"
        code, _, _ = run(["reconstruct", sweep_dir, "-o", out, "--baseline-out", base], capsys)
        assert code == 0 and base.exists()


class TestResliceCommand:
    @pytest.fixture()
    def volume_path(self, sweep_dir, tmp_path, capsys):
        out = tmp_path / "v.darevol"
        run(["reconstruct", sweep_dir, "-o", out], capsys)
        return out

    def test_round_trip_image(self, sweep_dir, volume_path, tmp_path, capsys):
        out = tmp_path / "r.pgm"
        code, stdout, _ = run(
            ["reslice", volume_path, "--pose", 0, 0, 3.0, 1, 0, 0, 0,
             "--dims", 32, 32, "--pitch", 0.25, 0.25, "-o", out], capsys)
        assert code == 0
        assert "ms" in stdout
        img = read_pgm(out)
        cov = read_pbm(tmp_path / "r.coverage.pbm")
        assert img.shape == (32, 32)
        assert cov.all()
        vol = load_volume(volume_path)
        plane = ReslicePlane(Pose(Quaternion.identity(), (0, 0, 3.0)), 32, 32, (0.25, 0.25))
        np.testing.assert_array_equal(img, reslice(vol, plane, ResliceConfig()).pixels)
        # z=3.0 is exactly frame 12 of the 25-frame 0..6 mm sweep: the
        # reslice must reproduce that source frame within one gray level
        frames = np.fromfile(os.path.join(sweep_dir, "frames.raw"),
                             dtype=np.uint8).reshape(25, 32, 32)
        assert np.abs(img.astype(int) - frames[12].astype(int)).max() <= 1

    def test_out_of_bounds_pose_warns_but_exits_zero(self, volume_path, tmp_path, capsys):
        out = tmp_path / "far.pgm"
        code, _, stderr = run(
            ["reslice", volume_path, "--pose", 900, 900, 900, 1, 0, 0, 0,
             "--dims", 16, 16, "--pitch", 0.25, 0.25, "-o", out], capsys)
        assert code == 0
        assert "outside" in stderr
        assert not read_pbm(tmp_path / "far.coverage.pbm").any()

    def test_k_dist_zero_reproducible(self, volume_path, tmp_path, capsys):
        args = ["reslice", volume_path, "--pose", 0, 0, 3.0, 1, 0, 0, 0,
                "--dims", 24, 24, "--pitch", 0.25, 0.25, "--k-dist", 0]
        run(args + ["-o", tmp_path / "a.pgm"], capsys)
        run(args + ["-o", tmp_path / "b.pgm"], capsys)
        assert (tmp_path / "a.pgm").read_bytes() == (tmp_path / "b.pgm").read_bytes()
        # and equals the library path with the same config
        vol = load_volume(volume_path)
        plane = ReslicePlane(Pose(Quaternion.identity(), (0, 0, 3.0)), 24, 24, (0.25, 0.25))
        expected = reslice(vol, plane, ResliceConfig(k_dist=0.0)).pixels
        np.testing.assert_array_equal(read_pgm(tmp_path / "a.pgm"), expected)

    def test_baseline_side_output(self, sweep_dir, volume_path, tmp_path, capsys):
        base = tmp_path / "v.scalarvol"
        run(["reconstruct", sweep_dir, "-o", tmp_path / "v2.darevol",
             "--baseline-out", base], capsys)
        out = tmp_path / "r.pgm"
        code, stdout, _ = run(
            ["reslice", volume_path, "--pose", 0, 0, 3.0, 1, 0, 0, 0,
             "--dims", 16, 16, "--pitch", 0.25, 0.25, "--baseline", base, "-o", out], capsys)
        assert code == 0
        assert (tmp_path / "r.baseline.pgm").exists()

    def test_bad_pose_arity_is_usage_error(self, volume_path, tmp_path, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["reslice", str(volume_path), "--pose", "1", "2", "3",
                  "--dims", "8", "8", "--pitch", "0.2", "0.2", "-o", str(tmp_path / "x.pgm")])
        assert exc.value.code == 2


class TestPhantomCommands:
    def test_example_scene_and_generate(self, tmp_path, capsys):
        scene_path = tmp_path / "scene.json"
        code, _, _ = run(["phantom", "example-scene", "-o", scene_path], capsys)
        assert code == 0
        doc = json.loads(scene_path.read_text())
        doc["sweeps"] = [
            {**s, "frames": 4} if "frames" in s else {**s, "poses": s["poses"][:3]}
            for s in doc["sweeps"]
        ]
        small = tmp_path / "small.json"
        small.write_text(json.dumps(doc))
        out = tmp_path / "gen"
        code, stdout, _ = run(["phantom", "generate", small, "-o", out], capsys)
        assert code == 0
        assert (out / "recon_a.daresweep" / "meta.json").exists()
        assert (out / "evaluation.truth" / "truth0000.pgm").exists()

    def test_generate_deterministic(self, tmp_path, capsys):
        scene = {
            "background_intensity": 30,
            "speckle": {"amplitude": 4.0, "seed": 9},
            "inclusions": [],
            "sweeps": [{
                "name": "s", "role": "reconstruction", "frames": 3,
                "width": 8, "height": 8, "pixel_pitch": [0.25, 0.25],
                "start": {"translation": [0, 0, 0]}, "end": {"translation": [0, 0, 1]},
            }],
        }
        p = tmp_path / "s.json"
        p.write_text(json.dumps(scene))
        run(["phantom", "generate", p, "-o", tmp_path / "g1"], capsys)
        run(["phantom", "generate", p, "-o", tmp_path / "g2"], capsys)
        a = (tmp_path / "g1" / "s.daresweep" / "frames.raw").read_bytes()
        b = (tmp_path / "g2" / "s.daresweep" / "frames.raw").read_bytes()
        assert a == b


def small_bench_scene(tmp_path, n_eval=8):
    from dare.phantom import default_benchmark_scene

    doc = default_benchmark_scene(speckle=3.0)
    for s in doc["sweeps"]:
        if "frames" in s:
            s["frames"] = 30
            s["width"] = s["height"] = 48
        else:
            s["poses"] = s["poses"][:n_eval]
            s["width"] = s["height"] = 48
    path = tmp_path / "bench_scene.json"
    path.write_text(json.dumps(doc))
    return path


class TestBenchAndEvaluate:
    def test_bench_produces_report(self, tmp_path, capsys):
        scene = small_bench_scene(tmp_path)
        out = tmp_path / "bench"
        code, stdout, _ = run(["bench", scene, "-o", out], capsys)
        assert code == 0
        assert "wilcoxon" in stdout
        report = json.loads((out / "report.json").read_text())
        assert {"ncc", "ssim"} <= set(report["summary"].keys())
        assert (out / "pairs.csv").exists() and (out / "summary.txt").exists()
        assert (out / "pairs.json").exists()

    def test_bench_deterministic_modulo_timing(self, tmp_path, capsys):
        scene = small_bench_scene(tmp_path)
        r1, r2 = tmp_path / "b1", tmp_path / "b2"
        assert run(["bench", scene, "--seed", 3, "-o", r1], capsys)[0] == 0
        assert run(["bench", scene, "--seed", 3, "-o", r2], capsys)[0] == 0

        def stripped(root):
            doc = json.loads((root / "report.json").read_text())
            doc.pop("timing", None)
            rows = [line.rsplit(",", 1)[0] for line in (root / "pairs.csv").read_text().splitlines()]
            return doc, rows

        assert stripped(r1) == stripped(r2)

    def test_evaluate_rewrites_report_from_pairs(self, tmp_path, capsys):
        scene = small_bench_scene(tmp_path)
        bench_dir = tmp_path / "bench"
        run(["bench", scene, "-o", bench_dir], capsys)
        eval_dir = tmp_path / "eval"
        code, stdout, _ = run(["evaluate", bench_dir / "pairs.json", "-o", eval_dir], capsys)
        assert code == 0
        original = json.loads((bench_dir / "report.json").read_text())
        recomputed = json.loads((eval_dir / "report.json").read_text())
        assert recomputed["summary"] == original["summary"]

    def test_evaluate_empty_pairs_is_usage_error(self, tmp_path, capsys):
        manifest = tmp_path / "empty.json"
        manifest.write_text(json.dumps({"pairs": []}))
        code, _, stderr = run(["evaluate", manifest, "-o", tmp_path / "out"], capsys)
        assert code == 2
        assert "no pairs" in stderr

"""Acceptance suite: the eight primary exit criteria, one test per criterion,
each printing a PASS/FAIL line (run with `pytest tests/test_acceptance.py -v -s`).

The similarity criteria are ordering- and property-based by design: absolute
NCC/SSIM levels depend on the imaged subject, so the assertions pin the
relationships (direction-aware beats direction-blind, exact oracle equality,
latency bands) rather than absolute metric values.
"""
import json
import math
import time
from contextlib import contextmanager

import numpy as np
import pytest
from scipy import stats as scipy_stats
from skimage.metrics import structural_similarity as skimage_ssim

from dare import protocol
from dare.baseline import compound, fill_holes, reslice_trilinear
from dare.cli import run_benchmark
from dare.evaluation import ncc, ssim, time_reslice, wilcoxon_signed_rank
from dare.geometry import Pose, Quaternion
from dare.phantom import (
    default_benchmark_scene,
    ground_truth_reslice,
    merge_recordings,
    opposing_sweeps_fixture,
    scene_from_dict,
    simulate_sweep,
    SweepPlan,
)
from dare.reconstruct import SweepRecording, reconstruct_volume
from dare.reslice import (
    ReslicePlane,
    ResliceConfig,
    reslice,
    reslice_bruteforce,
    sample_weight,
)
from dare.service import ResliceServer, ResliceServiceClient
from dare.volume import save_volume

from conftest import random_quaternion, random_volume


@contextmanager
def criterion(number, name):
    try:
        yield
    except Exception:
        print(f"\nACCEPTANCE {number} ({name}): FAIL", flush=True)
        raise
    print(f"\nACCEPTANCE {number} ({name}): PASS", flush=True)


# ---------------------------------------------------------------------------
# shared expensive fixtures


@pytest.fixture(scope="session")
def latency_volume():
    """~1e7-sample single-pass sweep over the bundled scene content."""
    scene, _ = scene_from_dict(default_benchmark_scene(speckle=5.0))
    plan = SweepPlan.linear(
        Pose.identity(), Pose(Quaternion.identity(), (0.0, 0.0, 45.0)), 225,
        width=212, height=212, pixel_pitch=(0.11, 0.11), frame_rate=30.0,
    )
    recording = simulate_sweep(scene, plan)
    volume = reconstruct_volume(recording, voxel_size=0.125, margin=1.0)
    assert volume.sample_count >= 9_000_000
    return volume


@pytest.fixture(scope="session")
def bench_dirs(tmp_path_factory):
    """The bundled benchmark, run twice with the same seed (criteria 4 and 7)."""
    root = tmp_path_factory.mktemp("acceptance_bench")
    runs = []
    for tag in ("run1", "run2"):
        scene, sweeps = scene_from_dict(default_benchmark_scene(seed=7))
        report = run_benchmark(scene, sweeps, str(root / tag),
                               voxel_size=0.25, margin=1.0, radius=None)
        runs.append((report, root / tag))
    return runs


# ---------------------------------------------------------------------------
# criteria


def test_criterion_1_oracle_equivalence(rng):
    """Grid reslice is pixel- and coverage-identical to the brute-force scan
    on >= 100 randomized (volume, plane, config) cases."""
    with criterion(1, "oracle equivalence"):
        t0 = time.perf_counter()
        cases = 0
        while cases < 100:
            n_samples = int(rng.integers(0, 10_001))
            volume = random_volume(rng, n_samples, extent=10.0,
                                   voxel_size=float(rng.choice([0.25, 0.5, 1.0])))
            q = random_quaternion(rng)
            plane = ReslicePlane(
                Pose(q, rng.uniform(-1, 11, 3)),
                int(rng.integers(4, 25)), int(rng.integers(4, 25)),
                (float(rng.uniform(0.1, 0.6)),) * 2,
            )
            cfg = ResliceConfig(
                interp_radius=float(rng.uniform(0.15, 1.5)),
                normal_threshold_deg=float(rng.uniform(5, 85)),
                inplane_threshold_deg=float(rng.uniform(5, 85)),
                k_normal=float(rng.uniform(0, 20)),
                k_inplane=float(rng.uniform(0, 10)),
                k_dist=float(rng.choice([0.0, 1.0, 2.0, 4.0])),
                unassigned_value=int(rng.integers(0, 256)),
            )
            fast = reslice(volume, plane, cfg)
            brute = reslice_bruteforce(volume, plane, cfg)
            np.testing.assert_array_equal(fast.pixels, brute.pixels)
            np.testing.assert_array_equal(fast.coverage, brute.coverage)
            cases += 1
        elapsed = time.perf_counter() - t0
        assert elapsed < 120.0, f"oracle sweep took {elapsed:.1f}s, budget is 2 min"


def test_criterion_2_round_trip(rng):
    """A single-frame volume resliced at the acquisition pose reproduces the
    frame within +-1 gray level on all covered pixels."""
    with criterion(2, "single-frame round trip"):
        img = rng.integers(0, 256, (48, 64), dtype=np.uint8)
        recording = SweepRecording(
            images=img[None], image_timestamps=[0.0], pose_timestamps=[0.0],
            poses=[Pose.identity()], pixel_pitch=(0.2, 0.2),
        )
        volume = reconstruct_volume(recording, voxel_size=0.125, margin=0.5)
        plane = ReslicePlane(Pose.identity(), 64, 48, (0.2, 0.2))
        out = reslice(volume, plane, ResliceConfig())
        assert out.coverage.all()
        assert np.abs(out.pixels.astype(int) - img.astype(int)).max() <= 1


def test_criterion_3_directional_selectivity():
    """Two opposing sweeps (50 toward +z planes, 200 toward -z planes):
    direction-aware reslice MAE < 5 per direction; the direction-blind
    baseline exceeds 60 both ways and is identical for +-z planes."""
    with criterion(3, "directional selectivity"):
        scene, up, down = opposing_sweeps_fixture()
        recording = merge_recordings([
            simulate_sweep(scene, up), simulate_sweep(scene, down, start_time=10.0),
        ])
        volume = reconstruct_volume(recording, voxel_size=0.25, margin=1.0)
        scalar = fill_holes(compound(recording, voxel_size=0.25, margin=1.0))
        cfg = ResliceConfig(interp_radius=0.25)
        depth = (up.height - 1) * up.pixel_pitch[1]
        z0 = up.poses[len(up.poses) // 2].translation[2]
        plane_up = ReslicePlane(
            Pose(Quaternion.identity(), (0.0, 0.0, z0)), up.width, up.height, up.pixel_pitch)
        plane_down = ReslicePlane(
            Pose(Quaternion.from_axis_angle((1, 0, 0), math.pi), (0.0, depth, z0)),
            up.width, up.height, up.pixel_pitch)

        for plane, expected in ((plane_up, 50), (plane_down, 200)):
            truth = ground_truth_reslice(scene, plane)
            assert (truth.pixels == expected).all()
            d = reslice(volume, plane, cfg)
            mask = d.coverage & truth.coverage
            assert mask.any()
            mae_dare = np.abs(d.pixels[mask].astype(float) - truth.pixels[mask]).mean()
            assert mae_dare < 5.0, f"direction-aware MAE {mae_dare}"
            b = reslice_trilinear(scalar, plane)
            bmask = b.coverage & truth.coverage
            mae_base = np.abs(b.pixels[bmask].astype(float) - truth.pixels[bmask]).mean()
            assert mae_base > 60.0, f"baseline MAE {mae_base}"

        flip_up = reslice_trilinear(scalar, plane_up)
        flip_down = reslice_trilinear(scalar, plane_down)
        np.testing.assert_array_equal(flip_down.pixels, np.flipud(flip_up.pixels))
        np.testing.assert_array_equal(flip_down.coverage, np.flipud(flip_up.coverage))


def test_criterion_4_ordering_reproduction(bench_dirs):
    """On the bundled benchmark (>= 50 paired reslices at second-sweep poses)
    the direction-aware medians strictly exceed the baseline's for NCC and
    SSIM, paired Wilcoxon two-sided p < 0.05. Magnitudes reported, not
    asserted."""
    with criterion(4, "benchmark ordering (NCC/SSIM medians, Wilcoxon)"):
        report, _ = bench_dirs[0]
        assert len(report.pair_ids) >= 50
        for metric in ("ncc", "ssim"):
            entry = report.summary[metric]
            dare_median = entry["dare"]["median"]
            base_median = entry["baseline"]["median"]
            assert dare_median > base_median, (
                f"{metric}: dare {dare_median:.4f} <= baseline {base_median:.4f}")
            assert entry["wilcoxon_p"] < 0.05
            print(f"  {metric}: dare median {dare_median:.4f} "
                  f"(IQR {entry['dare']['iqr_low']:.4f}..{entry['dare']['iqr_high']:.4f}) "
                  f"vs baseline {base_median:.4f} "
                  f"(IQR {entry['baseline']['iqr_low']:.4f}..{entry['baseline']['iqr_high']:.4f}), "
                  f"p={entry['wilcoxon_p']:.2e}")


def test_criterion_5_latency_band(latency_volume):
    """Radius 0.25/0.125 median-latency ratio in [4, 12]; absolute median
    <= 60 ms for 256x256 reslices of a ~1e7-sample volume at radius 0.125
    (desk-scale proxy; this sandbox has 2 cores vs the stated 8)."""
    with criterion(5, "latency band and cubic scaling"):
        t0 = time.perf_counter()
        rng = np.random.default_rng(3)
        planes = [
            ReslicePlane(
                Pose(Quaternion.identity(), (0.0, 0.0, 5.0 + 35.0 * rng.random())),
                256, 256, (0.09, 0.09))
            for _ in range(12)
        ]
        fine = time_reslice(latency_volume, planes, ResliceConfig(interp_radius=0.125),
                            repetitions=3)
        coarse = time_reslice(latency_volume, planes, ResliceConfig(interp_radius=0.25),
                              repetitions=3)
        ratio = coarse["median_ms"] / fine["median_ms"]
        print(f"  median {fine['median_ms']:.1f} ms @ r=0.125, "
              f"{coarse['median_ms']:.1f} ms @ r=0.25, ratio {ratio:.2f}")
        assert fine["median_ms"] <= 60.0
        assert 4.0 <= ratio <= 12.0
        assert time.perf_counter() - t0 < 300.0


def test_criterion_6_weight_formula_spot_checks():
    """sample_weight reproduces the exponential-formula values within 1e-9;
    k_dist = 0 equals the pure orientation weighting bit-for-bit."""
    with criterion(6, "weight formula spot checks"):
        cfg = ResliceConfig()
        assert sample_weight((1.0, 1.0), 0.0, cfg) == 1.0

        dn, di = math.cos(math.radians(10)), math.cos(math.radians(5))
        expected = math.exp(10.0 * (dn - 1.0) + 5.0 * (di - 1.0))
        got = sample_weight((dn, di), 0.0, cfg)
        assert abs(got - expected) <= 1e-9
        assert got == pytest.approx(0.8428, abs=1e-4)

        w = sample_weight((1.0, 1.0), 0.125, ResliceConfig(interp_radius=0.125, k_dist=2.0))
        assert abs(w - math.exp(-2.0)) <= 1e-9
        assert w == pytest.approx(0.13534, abs=1e-5)

        no_dist = ResliceConfig(k_dist=0.0)
        rng = np.random.default_rng(11)
        for _ in range(200):
            dn = math.cos(rng.uniform(0.0, math.radians(25)))
            di = math.cos(rng.uniform(0.0, math.radians(15)))
            dist = rng.uniform(0.0, no_dist.interp_radius * math.sqrt(3))
            pure = math.exp(no_dist.k_normal * (dn - 1.0) + no_dist.k_inplane * (di - 1.0))
            assert sample_weight((dn, di), dist, no_dist) == pure


def test_criterion_7_determinism(bench_dirs, rng, tmp_path):
    """Reconstruction produces bit-identical volume files across runs; the
    benchmark report's metric content is identical under a fixed seed
    (wall-clock latency fields excluded, as documented)."""
    with criterion(7, "determinism"):
        scene, sweeps = scene_from_dict(default_benchmark_scene(seed=7))
        _, plan = sweeps["recon_a"]
        small = SweepPlan.linear(plan.poses[0], plan.poses[-1], 12,
                                 width=32, height=32, pixel_pitch=plan.pixel_pitch)
        recording = simulate_sweep(scene, small)
        paths = [tmp_path / f"{tag}.darevol" for tag in ("a", "b")]
        for path in paths:
            save_volume(reconstruct_volume(recording, 0.25, 1.0), path)
        assert paths[0].read_bytes() == paths[1].read_bytes()

        def stripped(out_dir):
            doc = json.loads((out_dir / "report.json").read_text())
            doc.pop("timing", None)
            csv_rows = [
                line.rsplit(",", 1)[0]  # drop the wall-clock latency column
                for line in (out_dir / "pairs.csv").read_text().splitlines()
            ]
            return doc, csv_rows

        (_, dir1), (_, dir2) = bench_dirs
        assert stripped(dir1) == stripped(dir2)


def test_criterion_8_metric_correctness(rng):
    """NCC/SSIM identity and anti-correlation exact; SSIM matches the
    reference implementation within 1e-6; exact Wilcoxon p equals 2^n
    enumeration for n <= 12."""
    with criterion(8, "metric correctness"):
        img = rng.integers(0, 256, (24, 24)).astype(float)
        assert ncc(img, img) == pytest.approx(1.0, abs=1e-12)
        assert ncc(img, 255.0 - img) == pytest.approx(-1.0, abs=1e-12)
        assert ssim(img, img) == pytest.approx(1.0, abs=1e-12)

        for _ in range(5):
            a = rng.uniform(0, 255, (20, 20))
            b = np.clip(a + rng.normal(0, 15, a.shape), 0, 255)
            ref = skimage_ssim(a, b, win_size=7, data_range=255.0, gaussian_weights=False)
            assert ssim(a, b) == pytest.approx(ref, abs=1e-6)

        def enumeration_p(diffs):
            d = np.asarray(diffs, float)
            d = d[d != 0]
            ranks = scipy_stats.rankdata(np.abs(d))
            w_obs = ranks[d > 0].sum()
            c_le = c_ge = 0
            for bits in range(1 << len(d)):
                w = sum(ranks[i] for i in range(len(d)) if (bits >> i) & 1)
                c_le += w <= w_obs
                c_ge += w >= w_obs
            return min(1.0, 2.0 * min(c_le, c_ge) / (1 << len(d)))

        assert wilcoxon_signed_rank([1, 2, 3, 4, 5, 6]) == 0.03125
        checked = 0
        while checked < 20:
            n = int(rng.integers(5, 13))
            d = np.round(rng.normal(0, 3, n))
            d = d[d != 0]
            if len(d) < 5:
                continue
            assert wilcoxon_signed_rank(d) == enumeration_p(d)
            checked += 1


def test_service_latency_under_20hz_stream(latency_volume):
    """Module invariant (not a numbered criterion): a 20 Hz request stream at
    default config on the desk-scale volume sees server-side p95 <= 100 ms
    and median <= 60 ms."""
    server = ResliceServer(latency_volume, port=0)
    server.start()
    try:
        client = ResliceServiceClient("127.0.0.1", server.port)
        client.hello()
        latencies = []
        period = 1.0 / 20.0
        rng = np.random.default_rng(4)
        for i in range(40):
            t_next = time.perf_counter() + period
            client.send_request(protocol.ResliceRequest(
                request_id=i,
                pose=(0.0, 0.0, 5.0 + 35.0 * rng.random(), 1.0, 0.0, 0.0, 0.0),
                width=256, height=256, pixel_pitch=(0.09, 0.09),
            ))
            resp = client.read_message()
            assert resp.status == protocol.STATUS_OK
            if i >= 3:  # exclude warmup
                latencies.append(resp.latency_ms)
            time.sleep(max(0.0, t_next - time.perf_counter()))
        client.close()
        median = float(np.median(latencies))
        p95 = float(np.percentile(latencies, 95))
        print(f"\n  service stream: median {median:.1f} ms, p95 {p95:.1f} ms")
        assert median <= 60.0
        assert p95 <= 100.0
    finally:
        server.stop()

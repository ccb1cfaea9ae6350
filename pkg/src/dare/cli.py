"""Command-line entry points: reconstruct, reslice, bench, evaluate,
phantom generate, serve."""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import baseline as baseline_mod
from . import evaluation, phantom, protocol
from .errors import DareError
from .geometry import Pose, Quaternion
from .pgm import read_pbm, read_pgm, write_pbm, write_pgm
from .reconstruct import load_sweep, reconstruct_volume, save_sweep
from .reslice import ReslicePlane, ResliceConfig, ResliceImage, reslice
from .service import ResliceServer, default_port
from .volume import load_volume, save_volume


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DareError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(f"error: {e.filename or e}: file not found", file=sys.stderr)
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dare", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("reconstruct", help="build a directional volume from a sweep recording")
    p.add_argument("sweep", help=".daresweep directory")
    p.add_argument("--voxel-size", type=float, default=0.125, help="voxel edge length, mm")
    p.add_argument("--margin", type=float, default=1.0, help="bounding-box margin, mm")
    p.add_argument("--baseline-out", help="also write a mean-compounded .scalarvol here")
    p.add_argument("--hole-fill-passes", type=int, default=3)
    p.add_argument("-o", "--output", required=True, help="output .darevol path")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("reslice", help="extract one image from a volume at a virtual pose")
    p.add_argument("volume", help=".darevol file")
    p.add_argument("--pose", type=float, nargs=7, required=True,
                   metavar=("TX", "TY", "TZ", "QW", "QX", "QY", "QZ"))
    p.add_argument("--dims", type=int, nargs=2, required=True, metavar=("W", "H"))
    p.add_argument("--pitch", type=float, nargs=2, required=True, metavar=("PX", "PY"))
    _add_config_flags(p)
    p.add_argument("--baseline", help="also reslice this .scalarvol at the same plane")
    p.add_argument("-o", "--output", required=True, help="output .pgm path")
    p.set_defaults(func=cmd_reslice)

    p = sub.add_parser("bench", help="run the phantom benchmark pipeline end to end")
    p.add_argument("scene", help="scene .json path, or 'default' for the bundled scene")
    p.add_argument("--seed", type=int, default=None, help="override the scene noise seed")
    p.add_argument("--voxel-size", type=float, default=0.25)
    p.add_argument("--margin", type=float, default=1.0)
    p.add_argument("--radius", type=float, default=None,
                   help="interpolation radius, default = voxel size")
    p.add_argument("--skip-timing", action="store_true",
                   help="omit wall-clock fields for bit-reproducible reports")
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("evaluate", help="compute metrics for recorded image pairs")
    p.add_argument("pairs", help="pair manifest .json")
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("phantom", help="synthetic phantom utilities")
    psub = p.add_subparsers(dest="phantom_command", required=True)
    g = psub.add_parser("generate", help="render scene sweeps to .daresweep + ground truths")
    g.add_argument("scene", help="scene .json path, or 'default'")
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("-o", "--output", required=True, help="output directory")
    g.set_defaults(func=cmd_phantom_generate)
    e = psub.add_parser("example-scene", help="write the bundled benchmark scene as JSON")
    e.add_argument("-o", "--output", required=True)
    e.set_defaults(func=cmd_example_scene)

    p = sub.add_parser("serve", help="serve reslices for a volume over TCP")
    p.add_argument("volume", help=".darevol or .scalarvol file")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=None,
                   help=f"default from ${'DARE_PORT'} or {default_port()}")
    _add_config_flags(p)
    p.set_defaults(func=cmd_serve)
    return parser


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--radius", type=float, default=ResliceConfig.interp_radius,
                   dest="interp_radius", help="interpolation radius, mm")
    p.add_argument("--normal-threshold", type=float, default=ResliceConfig.normal_threshold_deg,
                   help="normal alignment gate, degrees")
    p.add_argument("--inplane-threshold", type=float, default=ResliceConfig.inplane_threshold_deg,
                   help="in-plane alignment gate, degrees")
    p.add_argument("--k-normal", type=float, default=ResliceConfig.k_normal)
    p.add_argument("--k-inplane", type=float, default=ResliceConfig.k_inplane)
    p.add_argument("--k-dist", type=float, default=ResliceConfig.k_dist)


def _config_from_args(args) -> ResliceConfig:
    return ResliceConfig(
        interp_radius=args.interp_radius,
        normal_threshold_deg=args.normal_threshold,
        inplane_threshold_deg=args.inplane_threshold,
        k_normal=args.k_normal,
        k_inplane=args.k_inplane,
        k_dist=args.k_dist,
    )


def cmd_reconstruct(args) -> int:
    sweep = load_sweep(args.sweep)
    volume = reconstruct_volume(sweep, voxel_size=args.voxel_size, margin=args.margin)
    save_volume(volume, args.output)
    nx, ny, nz = volume.dims
    print(f"volume: {args.output}")
    print(f"  origin   {volume.origin[0]:.3f} {volume.origin[1]:.3f} {volume.origin[2]:.3f} mm")
    print(f"  voxel    {volume.voxel_size} mm")
    print(f"  dims     {nx} x {ny} x {nz} ({volume.cell_count} cells)")
    print(f"  samples  {volume.sample_count}")
    if volume.rejected_out_of_bounds:
        print(f"  warning: {volume.rejected_out_of_bounds} samples fell outside the grid")
    if args.baseline_out:
        scalar = baseline_mod.fill_holes(
            baseline_mod.compound(sweep, voxel_size=args.voxel_size, margin=args.margin),
            max_passes=args.hole_fill_passes,
        )
        baseline_mod.save_scalar_volume(scalar, args.baseline_out)
        print(f"baseline volume: {args.baseline_out} ({scalar.observed_count} observed voxels)")
    return 0


def _plane_from_args(args) -> ReslicePlane:
    tx, ty, tz, qw, qx, qy, qz = args.pose
    return ReslicePlane(
        pose=Pose(Quaternion(qw, qx, qy, qz).normalized(), (tx, ty, tz)),
        width=args.dims[0], height=args.dims[1],
        pixel_pitch=(args.pitch[0], args.pitch[1]),
    )


def _write_image(image: ResliceImage, path: str):
    write_pgm(path, image.pixels)
    write_pbm(_coverage_path(path), image.coverage)


def _coverage_path(image_path: str) -> str:
    stem, _ = os.path.splitext(image_path)
    return stem + ".coverage.pbm"


def cmd_reslice(args) -> int:
    volume = load_volume(args.volume)
    plane = _plane_from_args(args)
    image = reslice(volume, plane, _config_from_args(args))
    _write_image(image, args.output)
    covered = int(np.count_nonzero(image.coverage))
    print(f"reslice: {args.output} ({image.timing_ms:.2f} ms, "
          f"{covered}/{image.coverage.size} pixels covered)")
    if covered == 0:
        print("warning: plane is entirely outside the sampled region", file=sys.stderr)
    if args.baseline:
        scalar = baseline_mod.load_scalar_volume(args.baseline)
        base_image = baseline_mod.reslice_trilinear(scalar, plane)
        stem, ext = os.path.splitext(args.output)
        base_path = f"{stem}.baseline{ext}"
        _write_image(base_image, base_path)
        print(f"baseline reslice: {base_path} ({base_image.timing_ms:.2f} ms)")
    return 0


def _load_scene(path: str, seed: int | None):
    if path == "default":
        doc = phantom.default_benchmark_scene(seed=7 if seed is None else seed)
    else:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        if seed is not None:
            doc.setdefault("speckle", {})["seed"] = seed
    return phantom.scene_from_dict(doc)


def cmd_phantom_generate(args) -> int:
    scene, sweeps = _load_scene(args.scene, args.seed)
    os.makedirs(args.output, exist_ok=True)
    for name, (role, plan) in sweeps.items():
        recording = phantom.simulate_sweep(scene, plan)
        sweep_dir = os.path.join(args.output, f"{name}.daresweep")
        save_sweep(recording, sweep_dir)
        print(f"sweep '{name}' ({role}): {plan.width}x{plan.height} x {len(plan.poses)} frames "
              f"-> {sweep_dir}")
        if role == "evaluation":
            truth_dir = os.path.join(args.output, f"{name}.truth")
            os.makedirs(truth_dir, exist_ok=True)
            for i, pose in enumerate(plan.poses):
                plane = ReslicePlane(pose, plan.width, plan.height, plan.pixel_pitch)
                truth = phantom.ground_truth_reslice(scene, plane)
                _write_image(truth, os.path.join(truth_dir, f"truth{i:04d}.pgm"))
            print(f"  ground truth images -> {truth_dir}")
    return 0


def cmd_example_scene(args) -> int:
    with open(args.output, "w", encoding="utf-8") as fh:
        json.dump(phantom.default_benchmark_scene(), fh, indent=2)
        fh.write("\n")
    print(f"scene written to {args.output}")
    return 0


def run_benchmark(scene, sweeps, out_dir: str, voxel_size: float, margin: float,
                  radius: float | None, skip_timing: bool = False):
    """Phantom -> reconstruction (directional + baseline) -> reslice at the
    evaluation poses -> paired report. Returns the ComparisonReport."""
    recon_plans = [plan for role, plan in sweeps.values() if role == "reconstruction"]
    eval_plans = [plan for role, plan in sweeps.values() if role == "evaluation"]
    if not recon_plans or not eval_plans:
        raise DareError("scene needs at least one reconstruction and one evaluation sweep")
    parts = []
    t = 0.0
    for plan in recon_plans:
        parts.append(phantom.simulate_sweep(scene, plan, start_time=t))
        t = float(parts[-1].image_timestamps[-1]) + 0.5
    recording = phantom.merge_recordings(parts)
    dare_volume = reconstruct_volume(recording, voxel_size=voxel_size, margin=margin)
    scalar = baseline_mod.fill_holes(
        baseline_mod.compound(recording, voxel_size=voxel_size, margin=margin)
    )
    cfg = ResliceConfig(interp_radius=voxel_size if radius is None else radius)

    os.makedirs(out_dir, exist_ok=True)
    image_dir = os.path.join(out_dir, "images")
    os.makedirs(image_dir, exist_ok=True)
    save_volume(dare_volume, os.path.join(out_dir, "dare.darevol"))
    baseline_mod.save_scalar_volume(scalar, os.path.join(out_dir, "baseline.scalarvol"))

    dare_images, base_images, truths, pair_ids = [], [], [], []
    latencies = {"dare": [], "baseline": []}
    latency_by_pair = {}
    manifest = []
    index = 0
    for plan in eval_plans:
        for pose in plan.poses:
            plane = ReslicePlane(pose, plan.width, plan.height, plan.pixel_pitch)
            d = reslice(dare_volume, plane, cfg)
            b = baseline_mod.reslice_trilinear(scalar, plane)
            g = phantom.ground_truth_reslice(scene, plane)
            pid = f"pair{index:04d}"
            paths = {}
            for tag, img in (("dare", d), ("baseline", b), ("truth", g)):
                path = os.path.join(image_dir, f"{pid}.{tag}.pgm")
                _write_image(img, path)
                paths[tag] = path
            manifest.append({
                "id": pid,
                "a": paths["dare"], "a_coverage": _coverage_path(paths["dare"]),
                "b": paths["baseline"], "b_coverage": _coverage_path(paths["baseline"]),
                "truth": paths["truth"], "truth_coverage": _coverage_path(paths["truth"]),
            })
            dare_images.append(d)
            base_images.append(b)
            truths.append(g)
            pair_ids.append(pid)
            latencies["dare"].append(d.timing_ms)
            latencies["baseline"].append(b.timing_ms)
            latency_by_pair[pid] = {"dare": d.timing_ms, "baseline": b.timing_ms}
            index += 1
    report = evaluation.run_comparison(
        dare_images, base_images, truths, pair_ids,
        latencies=None if skip_timing else latencies,
    )
    with open(os.path.join(out_dir, "pairs.json"), "w", encoding="utf-8") as fh:
        json.dump({"method_a": "dare", "method_b": "baseline", "pairs": manifest},
                  fh, indent=2, sort_keys=True)
        fh.write("\n")
    evaluation.write_report(report, out_dir, None if skip_timing else latency_by_pair)
    return report


def cmd_bench(args) -> int:
    scene, sweeps = _load_scene(args.scene, args.seed)
    report = run_benchmark(scene, sweeps, args.output, args.voxel_size, args.margin,
                           args.radius, args.skip_timing)
    print(evaluation.format_summary(report))
    print(f"report files in {args.output}")
    return 0


def _load_reslice_image(image_path: str, coverage_path: str | None) -> ResliceImage:
    pixels = read_pgm(image_path)
    if coverage_path and os.path.exists(coverage_path):
        coverage = read_pbm(coverage_path)
    else:
        coverage = np.ones(pixels.shape, dtype=bool)
    return ResliceImage(pixels=pixels, coverage=coverage, timing_ms=0.0)


def cmd_evaluate(args) -> int:
    with open(args.pairs, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    pairs = doc.get("pairs", [])
    if not pairs:
        print("error: pair manifest lists no pairs", file=sys.stderr)
        return 2
    images_a, images_b, truths, ids = [], [], [], []
    for rec in pairs:
        images_a.append(_load_reslice_image(rec["a"], rec.get("a_coverage")))
        images_b.append(_load_reslice_image(rec["b"], rec.get("b_coverage")))
        truths.append(_load_reslice_image(rec["truth"], rec.get("truth_coverage")))
        ids.append(rec.get("id", f"pair{len(ids):04d}"))
    report = evaluation.run_comparison(
        images_a, images_b, truths, ids,
        method_a=doc.get("method_a", "a"), method_b=doc.get("method_b", "b"),
    )
    evaluation.write_report(report, args.output)
    print(evaluation.format_summary(report))
    return 0


def cmd_serve(args) -> int:
    path = args.volume
    if path.endswith(".scalarvol"):
        volume = baseline_mod.load_scalar_volume(path)
        kind = "scalar (trilinear)"
    else:
        volume = load_volume(path)
        kind = "directional"
    server = ResliceServer(volume, host=args.host, port=args.port,
                           config=_config_from_args(args))
    port = server.start()
    print(f"serving {kind} volume {path} on {args.host}:{port} "
          f"(protocol v{protocol.PROTOCOL_VERSION})")
    try:
        server.serve_forever()
    finally:
        server.stop()
    return 0


if __name__ == "__main__":
    sys.exit(main())

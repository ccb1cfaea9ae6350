"""Synthetic tracked-sweep simulator with direction-dependent echoes.

Scenes are built from geometric primitives whose boundary shells reflect
with intensity scaled by |cos theta|^p, theta being the angle between the
beam (the image depth axis) and the local surface normal. Primitives can
reflect differently from their two sides (front vs back of the surface),
which is what makes opposing-sweep fixtures genuinely direction-dependent.

Not an acoustic simulator: no attenuation, shadowing or refraction. The
directionality of the echo is the only effect under test.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .geometry import Pose, Quaternion, frame_axes, slerp
from .reconstruct import SweepRecording, TrackedFrame
from .reslice import ReslicePlane, ResliceImage

DEFAULT_SPECULAR_EXPONENT = 4.0
DEFAULT_WALL_THICKNESS_MM = 0.6
DEFAULT_SPECKLE_AMPLITUDE = 5.0


@dataclass(frozen=True)
class Sphere:
    center: tuple[float, float, float]
    radius: float
    intensity: float
    back_intensity: float | None = None  # beam hitting the inside face; None = same
    wall_thickness: float = DEFAULT_WALL_THICKNESS_MM

    def shell_and_normal(self, pts: np.ndarray):
        rel = pts - np.asarray(self.center)
        dist = np.linalg.norm(rel, axis=-1)
        shell = np.abs(dist - self.radius) <= 0.5 * self.wall_thickness
        safe = np.maximum(dist[..., None], 1e-9)
        return shell, rel / safe


@dataclass(frozen=True)
class Tube:
    """Infinite cylinder shell (simulated vessel wall)."""

    point: tuple[float, float, float]
    direction: tuple[float, float, float]
    radius: float
    intensity: float
    back_intensity: float | None = None
    wall_thickness: float = DEFAULT_WALL_THICKNESS_MM

    def shell_and_normal(self, pts: np.ndarray):
        d = np.asarray(self.direction, dtype=float)
        d = d / np.linalg.norm(d)
        rel = pts - np.asarray(self.point)
        axial = rel @ d
        radial = rel - axial[..., None] * d
        dist = np.linalg.norm(radial, axis=-1)
        shell = np.abs(dist - self.radius) <= 0.5 * self.wall_thickness
        safe = np.maximum(dist[..., None], 1e-9)
        return shell, radial / safe


@dataclass(frozen=True)
class Slab:
    """Flat reflector sheet; front face is the side its normal points toward."""

    point: tuple[float, float, float]
    normal: tuple[float, float, float]
    intensity: float
    back_intensity: float | None = None
    wall_thickness: float = DEFAULT_WALL_THICKNESS_MM

    def shell_and_normal(self, pts: np.ndarray):
        n = np.asarray(self.normal, dtype=float)
        n = n / np.linalg.norm(n)
        off = (pts - np.asarray(self.point)) @ n
        shell = np.abs(off) <= 0.5 * self.wall_thickness
        normals = np.broadcast_to(n, pts.shape)
        return shell, normals


Primitive = Sphere | Tube | Slab


@dataclass(frozen=True)
class PhantomScene:
    background_intensity: float = 20.0
    specular_exponent: float = DEFAULT_SPECULAR_EXPONENT
    speckle_amplitude: float = 0.0
    speckle_seed: int = 0
    inclusions: tuple[Primitive, ...] = ()

    def __post_init__(self):
        if not (0.0 <= self.background_intensity <= 255.0):
            raise InvalidArgumentError("background intensity must be a gray level")
        for inc in self.inclusions:
            anchor = np.asarray(inc.point if hasattr(inc, "point") else inc.center, dtype=float)
            if not np.all(np.isfinite(anchor)):
                raise InvalidArgumentError("primitive coordinates must be finite")
            for value in (inc.intensity, inc.back_intensity):
                if value is not None and not (0.0 <= value <= 255.0):
                    raise InvalidArgumentError("primitive intensities must be gray levels 0..255")
            if inc.wall_thickness <= 0:
                raise InvalidArgumentError("wall thickness must be positive")


def render_intensities(
    scene: PhantomScene,
    pose: Pose,
    width: int,
    height: int,
    pixel_pitch: tuple[float, float],
    frame_key: int = 0,
    noise: bool = True,
) -> np.ndarray:
    """Analytic echo image at a probe pose, shape (height, width) uint8.

    Beam direction is the image depth axis in world coordinates. Speckle is
    seeded per (scene seed, frame_key) so frames are reproducible in any
    render order.
    """
    axes = frame_axes(pose)
    px, py = pixel_pitch
    u = np.arange(width, dtype=np.float64) * px
    v = np.arange(height, dtype=np.float64) * py
    pts = (
        u[None, :, None] * axes.x_axis
        + v[:, None, None] * axes.y_axis
        + pose.translation
    )
    beam = axes.y_axis
    img = np.full((height, width), float(scene.background_intensity))
    p = scene.specular_exponent
    for inc in scene.inclusions:
        shell, normals = inc.shell_and_normal(pts)
        if not shell.any():
            continue
        cos_t = normals @ beam
        front = cos_t < 0.0  # beam runs against the outward normal
        back_val = inc.intensity if inc.back_intensity is None else inc.back_intensity
        wall = np.where(front, inc.intensity, back_val)
        img += shell * wall * np.abs(cos_t) ** p
    if noise and scene.speckle_amplitude > 0.0:
        rng = np.random.default_rng((scene.speckle_seed, frame_key))
        img += rng.normal(0.0, scene.speckle_amplitude, img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def render_frame(
    scene: PhantomScene,
    pose: Pose,
    width: int,
    height: int,
    pixel_pitch: tuple[float, float],
    frame_key: int = 0,
    noise: bool = True,
    timestamp: float = 0.0,
) -> TrackedFrame:
    pixels = render_intensities(scene, pose, width, height, pixel_pitch, frame_key, noise)
    return TrackedFrame(pixels=pixels, pixel_pitch=pixel_pitch, timestamp=timestamp, pose=pose)


def ground_truth_reslice(scene: PhantomScene, plane: ReslicePlane, noise: bool = False) -> ResliceImage:
    """Reference image: the analytic scene rendered directly at the plane."""
    pixels = render_intensities(
        scene, plane.pose, plane.width, plane.height, plane.pixel_pitch, frame_key=0, noise=noise
    )
    return ResliceImage(
        pixels=pixels,
        coverage=np.ones((plane.height, plane.width), dtype=bool),
        timing_ms=0.0,
    )


@dataclass(frozen=True)
class SweepPlan:
    """Trajectory (explicit poses or start/end arc) plus imaging geometry."""

    poses: tuple[Pose, ...]
    width: int = 96
    height: int = 96
    pixel_pitch: tuple[float, float] = (0.25, 0.25)
    frame_rate: float = 30.0
    jitter_translation_mm: float = 0.0  # optional pose-stream jitter, off by default
    jitter_seed: int = 0

    def __post_init__(self):
        if len(self.poses) < 2:
            raise InvalidArgumentError("sweep plan needs at least 2 frames")
        for p in self.poses:
            if not np.all(np.isfinite(p.translation)):
                raise InvalidArgumentError("plan poses must be finite")
        if self.frame_rate <= 0:
            raise InvalidArgumentError("frame rate must be positive")

    @staticmethod
    def linear(start: Pose, end: Pose, frame_count: int, **kwargs) -> "SweepPlan":
        """Evenly interpolated arc: lerp translation, slerp rotation."""
        if frame_count < 2:
            raise InvalidArgumentError("sweep plan needs at least 2 frames")
        poses = []
        for k in range(frame_count):
            t = k / (frame_count - 1)
            poses.append(
                Pose(
                    slerp(start.rotation, end.rotation, t),
                    (1.0 - t) * start.translation + t * end.translation,
                )
            )
        return SweepPlan(poses=tuple(poses), **kwargs)


def simulate_sweep(scene: PhantomScene, plan: SweepPlan, start_time: float = 0.0) -> SweepRecording:
    """Render every planned pose into a synchronized recording.

    The pose stream carries the exact frame poses at the frame timestamps
    (identity calibration) unless translation jitter is enabled.
    """
    n = len(plan.poses)
    images = np.stack(
        [
            render_intensities(
                scene, pose, plan.width, plan.height, plan.pixel_pitch,
                frame_key=k, noise=scene.speckle_amplitude > 0.0,
            )
            for k, pose in enumerate(plan.poses)
        ]
    )
    timestamps = start_time + np.arange(n, dtype=float) / plan.frame_rate
    poses = list(plan.poses)
    if plan.jitter_translation_mm > 0.0:
        rng = np.random.default_rng(plan.jitter_seed)
        poses = [
            Pose(p.rotation, p.translation + rng.normal(0.0, plan.jitter_translation_mm, 3))
            for p in poses
        ]
    return SweepRecording(
        images=images,
        image_timestamps=timestamps,
        pose_timestamps=timestamps.copy(),
        poses=poses,
        pixel_pitch=plan.pixel_pitch,
    )


def merge_recordings(parts: list[SweepRecording], gap_s: float = 0.5) -> SweepRecording:
    """Concatenate same-geometry recordings into one sweep (e.g. two passes
    of the same target from different directions)."""
    if not parts:
        raise InvalidArgumentError("nothing to merge")
    if len({p.images.shape[1:] for p in parts}) != 1:
        raise InvalidArgumentError("all parts must share frame dimensions")
    images = []
    img_ts = []
    pose_ts = []
    poses = []
    offset = 0.0
    for part in parts:
        images.append(part.images)
        img_ts.append(part.image_timestamps + offset)
        pose_ts.append(part.pose_timestamps + offset)
        poses.extend(part.poses)
        offset = float(img_ts[-1][-1]) + gap_s
    return SweepRecording(
        images=np.concatenate(images),
        image_timestamps=np.concatenate(img_ts),
        pose_timestamps=np.concatenate(pose_ts),
        poses=poses,
        pixel_pitch=parts[0].pixel_pitch,
        calibration=parts[0].calibration,
        mask=parts[0].mask,
    )


# ---------------------------------------------------------------------------
# scene description files


def _pose_from_json(obj: dict) -> Pose:
    t = np.asarray(obj.get("translation", [0.0, 0.0, 0.0]), dtype=float)
    if "rotation" in obj:
        q = Quaternion(*[float(c) for c in obj["rotation"]]).normalized()
    elif "axis" in obj or "angle_deg" in obj:
        q = Quaternion.from_axis_angle(
            obj.get("axis", [1.0, 0.0, 0.0]), math.radians(float(obj.get("angle_deg", 0.0)))
        )
    else:
        q = Quaternion.identity()
    return Pose(q, t)


def _pose_to_json(p: Pose) -> dict:
    return {
        "translation": [float(c) for c in p.translation],
        "rotation": [p.rotation.w, p.rotation.x, p.rotation.y, p.rotation.z],
    }


_PRIMITIVES = {"sphere": Sphere, "tube": Tube, "slab": Slab}


def scene_from_dict(doc: dict) -> tuple[PhantomScene, dict[str, tuple[str, SweepPlan]]]:
    """Parse a scene document; returns the scene and {name: (role, plan)}."""
    speckle = doc.get("speckle", {})
    inclusions = []
    for entry in doc.get("inclusions", []):
        kind = entry.get("type")
        if kind not in _PRIMITIVES:
            raise InvalidArgumentError(f"unknown primitive type {kind!r}")
        kwargs = {k: v for k, v in entry.items() if k != "type"}
        for vec_key in ("center", "point", "direction", "normal"):
            if vec_key in kwargs:
                kwargs[vec_key] = tuple(float(c) for c in kwargs[vec_key])
        inclusions.append(_PRIMITIVES[kind](**kwargs))
    scene = PhantomScene(
        background_intensity=float(doc.get("background_intensity", 20.0)),
        specular_exponent=float(doc.get("specular_exponent", DEFAULT_SPECULAR_EXPONENT)),
        speckle_amplitude=float(speckle.get("amplitude", 0.0)),
        speckle_seed=int(speckle.get("seed", 0)),
        inclusions=tuple(inclusions),
    )
    sweeps: dict[str, tuple[str, SweepPlan]] = {}
    for entry in doc.get("sweeps", []):
        name = entry["name"]
        role = entry.get("role", "reconstruction")
        common = dict(
            width=int(entry.get("width", 96)),
            height=int(entry.get("height", 96)),
            pixel_pitch=tuple(float(c) for c in entry.get("pixel_pitch", [0.25, 0.25])),
            frame_rate=float(entry.get("frame_rate", 30.0)),
        )
        if "poses" in entry:
            plan = SweepPlan(poses=tuple(_pose_from_json(p) for p in entry["poses"]), **common)
        else:
            plan = SweepPlan.linear(
                _pose_from_json(entry["start"]),
                _pose_from_json(entry["end"]),
                int(entry["frames"]),
                **common,
            )
        sweeps[name] = (role, plan)
    return scene, sweeps


def load_scene_file(path) -> tuple[PhantomScene, dict[str, tuple[str, SweepPlan]]]:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as e:
            raise InvalidArgumentError(f"{path}:{e.lineno}: invalid JSON ({e.msg})") from e
    return scene_from_dict(doc)


def opposing_sweeps_fixture(
    front_intensity: float = 50.0,
    back_intensity: float = 200.0,
    width: int = 64,
    height: int = 64,
    pitch: float = 0.25,
    frame_count: int = 20,
) -> tuple[PhantomScene, SweepPlan, SweepPlan]:
    """Two coincident linear sweeps of a thick one-sided reflector.

    The "up" sweep images with plane normal +z (beam +y) and sees the front
    intensity everywhere; the "down" sweep is rotated 180 degrees about x
    (normal -z, beam -y) with its translation shifted so both sweeps cover
    the same world rectangle, and sees the back intensity. Pitch and spacing
    are binary fractions so mirrored pixel positions coincide bit-exactly.
    """
    depth = (height - 1) * pitch
    slab = Slab(
        point=(0.0, 0.5 * depth, 0.0),
        normal=(0.0, -1.0, 0.0),
        intensity=front_intensity,
        back_intensity=back_intensity,
        wall_thickness=4.0 * depth,  # shell swallows the whole imaged region
    )
    scene = PhantomScene(background_intensity=0.0, inclusions=(slab,))
    z_len = (frame_count - 1) * pitch
    up = SweepPlan.linear(
        Pose.identity(),
        Pose(Quaternion.identity(), (0.0, 0.0, z_len)),
        frame_count,
        width=width, height=height, pixel_pitch=(pitch, pitch),
    )
    flip = Quaternion.from_axis_angle((1.0, 0.0, 0.0), math.pi)
    down = SweepPlan.linear(
        Pose(flip, (0.0, depth, 0.0)),
        Pose(flip, (0.0, depth, z_len)),
        frame_count,
        width=width, height=height, pixel_pitch=(pitch, pitch),
    )
    return scene, up, down


def default_benchmark_scene(seed: int = 7, speckle: float = DEFAULT_SPECKLE_AMPLITUDE) -> dict:
    """Bundled benchmark: a vessel pair, a sphere and a tilted reflector,
    scanned by two reconstruction passes 35 degrees apart plus an evaluation
    pass whose poses alternate near each reconstruction direction."""
    width, height, pitch = 96, 96, 0.25
    cx = 0.5 * (width - 1) * pitch  # lateral center of the image, mm
    depth = (height - 1) * pitch
    sweep_len = 28.0

    def tilted(translation, tilt_deg):
        return {
            "translation": [float(c) for c in translation],
            "axis": [1.0, 0.0, 0.0],
            "angle_deg": float(tilt_deg),
        }

    sweeps = []
    for name, tilt in (("recon_a", 0.0), ("recon_b", 35.0)):
        sweeps.append(
            {
                "name": name,
                "role": "reconstruction",
                "frames": 140,
                "width": width,
                "height": height,
                "pixel_pitch": [pitch, pitch],
                "frame_rate": 30.0,
                "start": tilted([0.0, 0.0, 0.0], tilt),
                "end": tilted([0.0, 0.0, sweep_len], tilt),
            }
        )
    rng = np.random.default_rng(seed)
    eval_poses = []
    for i in range(56):
        near_b = i % 2 == 1
        tilt = (32.0 if near_b else 3.0) + rng.uniform(-2.0, 2.0)
        z = 4.0 + (sweep_len - 8.0) * rng.random()
        dx = rng.uniform(-1.0, 1.0)
        eval_poses.append(tilted([dx, 0.0, z], tilt))
    sweeps.append(
        {
            "name": "evaluation",
            "role": "evaluation",
            "width": width,
            "height": height,
            "pixel_pitch": [pitch, pitch],
            "frame_rate": 30.0,
            "poses": eval_poses,
        }
    )
    return {
        "background_intensity": 24.0,
        "specular_exponent": 4.0,
        "speckle": {"amplitude": speckle, "seed": seed},
        "inclusions": [
            {"type": "tube", "point": [cx, 0.45 * depth, 0.0], "direction": [0.0, 0.0, 1.0],
             "radius": 4.2, "intensity": 195.0, "wall_thickness": 0.9},
            {"type": "tube", "point": [cx - 6.5, 0.72 * depth, 0.0], "direction": [0.2, 0.0, 1.0],
             "radius": 2.4, "intensity": 165.0, "wall_thickness": 0.8},
            {"type": "sphere", "center": [cx + 6.0, 0.3 * depth, 0.45 * sweep_len],
             "radius": 3.4, "intensity": 225.0, "wall_thickness": 0.9},
            {"type": "slab", "point": [cx, 0.9 * depth, 0.0], "normal": [0.0, -1.0, 0.15],
             "intensity": 90.0, "back_intensity": 190.0, "wall_thickness": 0.8},
        ],
        "sweeps": sweeps,
    }

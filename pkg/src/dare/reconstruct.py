"""Sweep ingestion: pose/image synchronization, pixel-to-world mapping and
population of a DirectionalVolume, plus the on-disk sweep recording format.

A .daresweep is a directory:
    meta.json        width, height, pixel_pitch [mm/px lateral, axial],
                     calibration {translation, rotation}, optional mask file,
                     names of the three data files below
    frames.raw       concatenated row-major 8-bit frames
    timestamps.txt   one float (seconds) per frame
    poses.txt        one line per tracker sample:
                     "timestamp tx ty tz qw qx qy qz"
    mask.pbm         optional per-pixel validity bitmap (True = valid)
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, SweepFormatError, SynchronizationError
from .geometry import Pose, Quaternion, slerp
from .pgm import read_pbm, write_pbm
from .volume import DirectionalVolume, VolumeBuilder, compute_bounds

META_NAME = "meta.json"


@dataclass
class TrackedFrame:
    """One 2D image with its synchronized image-plane pose."""

    pixels: np.ndarray          # (height, width) uint8
    pixel_pitch: tuple[float, float]  # mm/pixel (lateral, axial)
    timestamp: float
    pose: Pose

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.uint8)
        if self.pixels.ndim != 2:
            raise InvalidArgumentError("frame pixels must be 2D")
        if self.pixel_pitch[0] <= 0 or self.pixel_pitch[1] <= 0:
            raise InvalidArgumentError("pixel pitch must be positive on both axes")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


def pixel_to_world(frame: TrackedFrame, u: float, v: float) -> np.ndarray:
    """World point of pixel (u, v); pixel (0,0) is the image-plane origin,
    u along lateral x, v along depth y."""
    if not (0 <= u < frame.width) or not (0 <= v < frame.height):
        raise InvalidArgumentError(f"pixel ({u}, {v}) outside {frame.width}x{frame.height} image")
    px, py = frame.pixel_pitch
    return frame.pose.apply((u * px, v * py, 0.0))


@dataclass
class SweepRecording:
    """Raw acquisition: timestamped images + timestamped tracker poses.

    Calibration maps the tracker marker frame to the image plane and is
    consumed as an input, never computed here.
    """

    images: np.ndarray                 # (n, height, width) uint8
    image_timestamps: np.ndarray       # (n,) seconds
    pose_timestamps: np.ndarray        # (m,) seconds
    poses: list[Pose]                  # tracker-marker poses in world
    pixel_pitch: tuple[float, float]
    calibration: Pose = field(default_factory=Pose.identity)
    mask: np.ndarray | None = None     # (height, width) bool, True = valid pixel

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.uint8)
        self.image_timestamps = np.asarray(self.image_timestamps, dtype=float)
        self.pose_timestamps = np.asarray(self.pose_timestamps, dtype=float)
        if self.images.ndim != 3 or self.images.shape[0] == 0:
            raise InvalidArgumentError("recording needs at least one frame")
        if len(self.image_timestamps) != self.images.shape[0]:
            raise InvalidArgumentError("one timestamp per frame required")
        if len(self.poses) != len(self.pose_timestamps):
            raise InvalidArgumentError("one timestamp per pose sample required")
        if not (np.all(np.isfinite(self.image_timestamps)) and np.all(np.isfinite(self.pose_timestamps))):
            raise InvalidArgumentError("timestamps must be finite")
        if np.any(np.diff(self.image_timestamps) < 0) or np.any(np.diff(self.pose_timestamps) < 0):
            raise InvalidArgumentError("timestamps must be monotone non-decreasing")
        if abs(self.calibration.rotation.norm() - 1.0) > 1e-3:
            raise InvalidArgumentError("calibration rotation must be unit norm")

    @property
    def frame_count(self) -> int:
        return int(self.images.shape[0])


def interpolate_pose(t: float, timestamps: np.ndarray, poses: list[Pose]) -> Pose:
    """Pose at time t: linear translation + slerp rotation between the
    bracketing samples. t must lie within the stream's time range."""
    i = int(np.searchsorted(timestamps, t, side="right")) - 1
    if i < 0 or t > timestamps[-1]:
        raise InvalidArgumentError(f"time {t} outside pose stream range")
    if i == len(poses) - 1 or timestamps[i] == t:
        return poses[i]
    t0, t1 = timestamps[i], timestamps[i + 1]
    alpha = 0.0 if t1 == t0 else (t - t0) / (t1 - t0)
    p0, p1 = poses[i], poses[i + 1]
    return Pose(
        slerp(p0.rotation, p1.rotation, alpha),
        (1.0 - alpha) * p0.translation + alpha * p1.translation,
    )


def synchronize(recording: SweepRecording) -> tuple[list[TrackedFrame], int]:
    """Pair every image with the pose interpolated to its timestamp and apply
    the calibration (image-plane pose = tracker pose o calibration).

    Images outside the pose stream's time range are dropped; returns
    (frames, dropped_count). Raises SynchronizationError when nothing overlaps.
    """
    ts = recording.pose_timestamps
    frames: list[TrackedFrame] = []
    dropped = 0
    for k in range(recording.frame_count):
        t = float(recording.image_timestamps[k])
        if t < ts[0] or t > ts[-1]:
            dropped += 1
            continue
        marker = interpolate_pose(t, ts, recording.poses)
        frames.append(
            TrackedFrame(
                pixels=recording.images[k],
                pixel_pitch=recording.pixel_pitch,
                timestamp=t,
                pose=marker.compose(recording.calibration),
            )
        )
    if not frames:
        raise SynchronizationError(
            "no image falls inside the pose stream time range "
            f"(images {recording.image_timestamps[0]:.3f}..{recording.image_timestamps[-1]:.3f}s, "
            f"poses {ts[0]:.3f}..{ts[-1]:.3f}s)"
        )
    return frames, dropped


def frame_world_positions(frame: TrackedFrame) -> np.ndarray:
    """World coordinates of every pixel, shape (height, width, 3)."""
    px, py = frame.pixel_pitch
    r = frame.pose.rotation.rotation_matrix()
    u = np.arange(frame.width, dtype=np.float64) * px
    v = np.arange(frame.height, dtype=np.float64) * py
    pts = (
        u[None, :, None] * r[:, 0]
        + v[:, None, None] * r[:, 1]
        + frame.pose.translation
    )
    return pts


def reconstruct_volume(
    sweep: SweepRecording,
    voxel_size: float = 0.125,
    margin: float = 1.0,
) -> DirectionalVolume:
    """Scatter every unmasked pixel of every synchronized frame into its
    nearest voxel (one pixel -> one voxel) and seal the volume.

    Stored per sample: intensity, acquisition orientation (frame rotation,
    canonicalized), exact world position. Deterministic: identical input
    yields a bit-identical volume.
    """
    if margin < 0:
        raise InvalidArgumentError("margin must be >= 0")
    frames, _ = synchronize(sweep)
    bounds = compute_bounds(frames, margin)
    if margin == 0.0 and np.all(bounds.extent == 0.0):
        raise InvalidArgumentError("degenerate bounds: zero extent on all axes and no margin")
    builder = VolumeBuilder(bounds, voxel_size)
    mask = sweep.mask
    for f in frames:
        pts = frame_world_positions(f).reshape(-1, 3)
        inten = f.pixels.reshape(-1)
        if mask is not None:
            keep = np.asarray(mask, dtype=bool).reshape(-1)
            pts, inten = pts[keep], inten[keep]
        q = f.pose.rotation.canonical()
        quats = np.broadcast_to(
            np.array([q.w, q.x, q.y, q.z], dtype=np.float32), (len(inten), 4)
        )
        builder.insert_batch(pts, quats, inten)
    volume = builder.seal()
    volume.rejected_out_of_bounds = builder.rejected_out_of_bounds
    return volume


# ---------------------------------------------------------------------------
# .daresweep directory format


def save_sweep(recording: SweepRecording, path) -> None:
    os.makedirs(path, exist_ok=True)
    n, h, w = recording.images.shape
    meta = {
        "width": w,
        "height": h,
        "pixel_pitch": [recording.pixel_pitch[0], recording.pixel_pitch[1]],
        "calibration": {
            "translation": [float(c) for c in recording.calibration.translation],
            "rotation": [recording.calibration.rotation.w, recording.calibration.rotation.x,
                         recording.calibration.rotation.y, recording.calibration.rotation.z],
        },
        "frame_file": "frames.raw",
        "timestamp_file": "timestamps.txt",
        "pose_file": "poses.txt",
        "mask_file": "mask.pbm" if recording.mask is not None else None,
    }
    with open(os.path.join(path, META_NAME), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(path, "frames.raw"), "wb") as fh:
        fh.write(recording.images.tobytes())
    with open(os.path.join(path, "timestamps.txt"), "w", encoding="utf-8") as fh:
        for t in recording.image_timestamps:
            fh.write(f"{float(t)!r}\n")
    with open(os.path.join(path, "poses.txt"), "w", encoding="utf-8") as fh:
        for t, p in zip(recording.pose_timestamps, recording.poses):
            q = p.rotation
            tr = [float(c) for c in p.translation]
            fh.write(f"{float(t)!r} {tr[0]!r} {tr[1]!r} {tr[2]!r} "
                     f"{float(q.w)!r} {float(q.x)!r} {float(q.y)!r} {float(q.z)!r}\n")
    if recording.mask is not None:
        write_pbm(os.path.join(path, "mask.pbm"), recording.mask)


def _require(meta: dict, key: str, path):
    if key not in meta:
        raise SweepFormatError(f"{path}: missing required field '{key}'")
    return meta[key]


def load_sweep(path) -> SweepRecording:
    meta_path = os.path.join(path, META_NAME)
    if not os.path.exists(meta_path):
        raise SweepFormatError(f"{meta_path}: file not found")
    with open(meta_path, "r", encoding="utf-8") as fh:
        try:
            meta = json.load(fh)
        except json.JSONDecodeError as e:
            raise SweepFormatError(f"{meta_path}:{e.lineno}: invalid JSON ({e.msg})") from e
    w = int(_require(meta, "width", meta_path))
    h = int(_require(meta, "height", meta_path))
    pitch = _require(meta, "pixel_pitch", meta_path)
    cal = _require(meta, "calibration", meta_path)
    calibration = Pose(
        Quaternion(*[float(c) for c in cal["rotation"]]),
        np.asarray(cal["translation"], dtype=float),
    )

    frame_path = os.path.join(path, meta.get("frame_file", "frames.raw"))
    if not os.path.exists(frame_path):
        raise SweepFormatError(f"{frame_path}: file not found")
    raw = np.fromfile(frame_path, dtype=np.uint8)
    if raw.size % (w * h) != 0:
        raise SweepFormatError(f"{frame_path}: size {raw.size} is not a multiple of {w}x{h}")
    images = raw.reshape(-1, h, w)

    ts_path = os.path.join(path, meta.get("timestamp_file", "timestamps.txt"))
    image_ts = _read_floats(ts_path, 1)[:, 0]
    if len(image_ts) != images.shape[0]:
        raise SweepFormatError(
            f"{ts_path}: {len(image_ts)} timestamps for {images.shape[0]} frames"
        )

    pose_path = os.path.join(path, meta.get("pose_file", "poses.txt"))
    pose_rows = _read_floats(pose_path, 8)
    poses = [
        Pose(Quaternion(qw, qx, qy, qz).normalized(), (tx, ty, tz))
        for _, tx, ty, tz, qw, qx, qy, qz in pose_rows
    ]

    mask = None
    if meta.get("mask_file"):
        mask = read_pbm(os.path.join(path, meta["mask_file"]))
        if mask.shape != (h, w):
            raise SweepFormatError(f"{path}: mask shape {mask.shape} != frame shape {(h, w)}")

    return SweepRecording(
        images=images,
        image_timestamps=image_ts,
        pose_timestamps=pose_rows[:, 0],
        poses=poses,
        pixel_pitch=(float(pitch[0]), float(pitch[1])),
        calibration=calibration,
        mask=mask,
    )


def _read_floats(path, columns: int) -> np.ndarray:
    """Whitespace-separated float columns; malformed lines are reported with
    their 1-based line number."""
    if not os.path.exists(path):
        raise SweepFormatError(f"{path}: file not found")
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            parts = stripped.split()
            if len(parts) != columns:
                raise SweepFormatError(
                    f"{path}:{lineno}: expected {columns} fields, got {len(parts)}"
                )
            try:
                rows.append([float(p) for p in parts])
            except ValueError as e:
                raise SweepFormatError(f"{path}:{lineno}: {e}") from e
    if not rows:
        raise SweepFormatError(f"{path}: no data lines")
    return np.asarray(rows, dtype=float)

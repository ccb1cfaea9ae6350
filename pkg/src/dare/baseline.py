"""Direction-agnostic benchmark pipeline: mean-compounded scalar volume with
iterative hole filling and trilinear reslicing.

This approximates the common freehand-compounding toolchain (documented as
"-like", not bit-exact): every pixel adds its intensity to its voxel, sealed
voxels hold the mean, empty voxels with observed 26-neighbors are filled by
the neighbor mean over a few Jacobi passes.
"""
from __future__ import annotations

import struct
import time

import numpy as np
from scipy import ndimage

from ._kernels import trilinear_rows
from .errors import InvalidArgumentError, VolumeFormatError
from .reconstruct import SweepRecording, frame_world_positions, synchronize
from .reslice import ReslicePlane, ResliceImage, _plane_params, _run_rows
from .volume import compute_bounds, VolumeBuilder

SCALAR_MAGIC = b"DARS"
SCALAR_VERSION = 1
VOXEL_EMPTY = 0
VOXEL_OBSERVED = 1
VOXEL_FILLED = 2

_HEADER = struct.Struct("<4sI3dd3IQ")  # same layout as the directional header


class ScalarVolume:
    """Sealed mean-compounded voxel grid (flat arrays, x-major linearization).

    counts holds the per-voxel observation count (0 for empty and hole-filled
    voxels); it exists in memory only, the .scalarvol format stores value+flag.
    """

    def __init__(self, origin, voxel_size, dims, values, flags, counts=None):
        self.origin = np.asarray(origin, dtype=float).reshape(3)
        self.voxel_size = float(voxel_size)
        self.dims = tuple(int(d) for d in dims)
        self.values = values  # (ncells,) float32
        self.flags = flags    # (ncells,) uint8, VOXEL_* states
        self.counts = counts  # (ncells,) int64 or None when loaded from disk
        self.values.flags.writeable = False
        self.flags.flags.writeable = False
        if self.counts is not None:
            self.counts.flags.writeable = False

    @property
    def cell_count(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    @property
    def observed_count(self) -> int:
        return int(np.count_nonzero(self.flags == VOXEL_OBSERVED))

    def grid_view(self, arr: np.ndarray) -> np.ndarray:
        return arr.reshape(self.dims)


def compound(sweep: SweepRecording, voxel_size: float = 0.125, margin: float = 1.0) -> ScalarVolume:
    """Mean compounding: per-voxel arithmetic mean of all pixel intensities.

    Sums are integer, so the result is exactly invariant to frame order.
    """
    if margin < 0:
        raise InvalidArgumentError("margin must be >= 0")
    frames, _ = synchronize(sweep)
    bounds = compute_bounds(frames, margin)
    if margin == 0.0 and np.all(bounds.extent == 0.0):
        raise InvalidArgumentError("degenerate bounds: zero extent on all axes and no margin")
    sizer = VolumeBuilder(bounds, voxel_size)  # reuse grid sizing rules
    dims = sizer.dims
    nx, ny, nz = dims
    ncells = nx * ny * nz
    sums = np.zeros(ncells, dtype=np.int64)
    counts = np.zeros(ncells, dtype=np.int64)
    mask = None if sweep.mask is None else np.asarray(sweep.mask, dtype=bool).reshape(-1)
    for f in frames:
        pts = frame_world_positions(f).reshape(-1, 3).astype(np.float32)
        inten = f.pixels.reshape(-1)
        if mask is not None:
            pts, inten = pts[mask], inten[mask]
        idx = np.floor((pts.astype(np.float64) - sizer.origin) / voxel_size).astype(np.int64)
        ok = np.all((idx >= 0) & (idx < np.asarray(dims)), axis=1)
        idx, inten = idx[ok], inten[ok]
        lin = (idx[:, 0] * ny + idx[:, 1]) * nz + idx[:, 2]
        np.add.at(sums, lin, inten.astype(np.int64))
        np.add.at(counts, lin, 1)
    observed = counts > 0
    values = np.zeros(ncells, dtype=np.float32)
    values[observed] = (sums[observed] / counts[observed]).astype(np.float32)
    flags = np.where(observed, np.uint8(VOXEL_OBSERVED), np.uint8(VOXEL_EMPTY)).astype(np.uint8)
    return ScalarVolume(sizer.origin, voxel_size, dims, values, flags, counts)


def fill_holes(volume: ScalarVolume, max_passes: int = 3) -> ScalarVolume:
    """Assign each empty voxel with >= 1 non-empty 26-neighbor the mean of
    those neighbors; repeat up to max_passes or until no change.

    All assignments within a pass read the previous pass's state (Jacobi),
    so the result is deterministic and independent of traversal order.
    Observed voxels are never modified.
    """
    values = volume.grid_view(volume.values).astype(np.float64)
    flags = volume.grid_view(volume.flags).copy()
    kernel = np.ones((3, 3, 3))
    kernel[1, 1, 1] = 0.0
    for _ in range(max_passes):
        known = flags != VOXEL_EMPTY
        if known.all():
            break
        neighbor_sum = ndimage.convolve(np.where(known, values, 0.0), kernel, mode="constant")
        neighbor_cnt = ndimage.convolve(known.astype(np.float64), kernel, mode="constant")
        fillable = (~known) & (neighbor_cnt > 0)
        if not fillable.any():
            break
        values[fillable] = neighbor_sum[fillable] / neighbor_cnt[fillable]
        flags[fillable] = VOXEL_FILLED
    return ScalarVolume(
        volume.origin, volume.voxel_size, volume.dims,
        values.astype(np.float32).reshape(-1), flags.reshape(-1),
        None if volume.counts is None else volume.counts.copy(),
    )


def reslice_trilinear(volume: ScalarVolume, plane: ReslicePlane) -> ResliceImage:
    """Per-pixel trilinear interpolation of the scalar grid at the plane.

    Direction-blind by construction: the plane normal never enters the
    computation, only pixel world positions do.
    """
    params = _plane_params(plane)
    (tx, ty, tz, r00, r01, _r02, r10, r11, _r12, r20, r21, _r22, px, py) = params
    t0 = time.perf_counter()
    vals = np.zeros((plane.height, plane.width), dtype=np.float64)
    cov = np.zeros((plane.height, plane.width), dtype=np.bool_)
    nx, ny, nz = volume.dims
    occupied = (volume.flags != VOXEL_EMPTY)
    args = (
        vals, cov,
        tx, ty, tz, r00, r01, r10, r11, r20, r21, px, py,
        float(volume.origin[0]), float(volume.origin[1]), float(volume.origin[2]),
        volume.voxel_size, nx, ny, nz,
        volume.values.astype(np.float64), occupied,
    )
    _run_rows(trilinear_rows, plane.height, args)
    pixels = np.zeros_like(vals, dtype=np.uint8)
    rounded = np.clip(np.floor(vals + 0.5), 0, 255).astype(np.uint8)
    pixels[cov] = rounded[cov]
    timing_ms = (time.perf_counter() - t0) * 1000.0
    return ResliceImage(pixels=pixels, coverage=cov, timing_ms=timing_ms)


def trilinear_at_points(volume: ScalarVolume, points) -> tuple[np.ndarray, np.ndarray]:
    """Float-valued trilinear samples at arbitrary world points (pre-rounding);
    returns (values, covered)."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    vals = np.zeros((1, len(pts)), dtype=np.float64)
    cov = np.zeros((1, len(pts)), dtype=np.bool_)
    nx, ny, nz = volume.dims
    occupied = (volume.flags != VOXEL_EMPTY)
    values = volume.values.astype(np.float64)
    # evaluate each point through the same kernel as reslice_trilinear by
    # treating it as a 1x1 plane
    for j, p in enumerate(pts):
        v = np.zeros((1, 1), dtype=np.float64)
        c = np.zeros((1, 1), dtype=np.bool_)
        trilinear_rows(
            v, c, 0, 1,
            float(p[0]), float(p[1]), float(p[2]),
            1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0,
            float(volume.origin[0]), float(volume.origin[1]), float(volume.origin[2]),
            volume.voxel_size, nx, ny, nz,
            values, occupied,
        )
        vals[0, j] = v[0, 0]
        cov[0, j] = c[0, 0]
    return vals[0], cov[0]


def save_scalar_volume(volume: ScalarVolume, path) -> None:
    """.scalarvol: the directional header layout with magic DARS; payload is
    (f32 value, u8 flag) per voxel; the header count field holds the
    observed-voxel count."""
    header = _HEADER.pack(
        SCALAR_MAGIC, SCALAR_VERSION,
        *[float(c) for c in volume.origin], volume.voxel_size,
        *volume.dims, volume.observed_count,
    )
    rec = np.zeros(volume.cell_count, dtype=np.dtype([("value", "<f4"), ("flag", "u1")]))
    rec["value"] = volume.values
    rec["flag"] = volume.flags
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(rec.tobytes())


def load_scalar_volume(path) -> ScalarVolume:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise VolumeFormatError(f"{path}: truncated header")
    magic, version, ox, oy, oz, voxel, nx, ny, nz, _count = _HEADER.unpack_from(raw, 0)
    if magic != SCALAR_MAGIC:
        raise VolumeFormatError(f"{path}: bad magic {magic!r}, expected {SCALAR_MAGIC!r}")
    if version != SCALAR_VERSION:
        raise VolumeFormatError(f"{path}: unsupported format version {version}")
    ncells = nx * ny * nz
    rec_dtype = np.dtype([("value", "<f4"), ("flag", "u1")])
    expected = _HEADER.size + ncells * rec_dtype.itemsize
    if len(raw) != expected:
        raise VolumeFormatError(f"{path}: size {len(raw)} != expected {expected}")
    rec = np.frombuffer(raw, dtype=rec_dtype, count=ncells, offset=_HEADER.size)
    return ScalarVolume(
        origin=(ox, oy, oz), voxel_size=voxel, dims=(nx, ny, nz),
        values=np.ascontiguousarray(rec["value"]),
        flags=np.ascontiguousarray(rec["flag"]),
    )

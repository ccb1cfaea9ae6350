"""Directional voxel grid: a regular 3D index grid whose cells reference
variable-length sample runs in one flat contiguous store.

Cells are half-open boxes [min, max) so boundary points have an unambiguous
owner. The flat store is sorted by linearized cell index ((ix*ny+iy)*nz+iz)
with insertion order preserved within a cell, which keeps per-cell runs
contiguous and makes a sealed volume safe for lock-free concurrent reads.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, OutOfBoundsError, VolumeFormatError
from .geometry import Quaternion

VOLUME_MAGIC = b"DARE"
VOLUME_VERSION = 1
DEFAULT_VOXEL_SIZE_MM = 0.125

_HEADER = struct.Struct("<4sI3dd3IQ")  # magic, version, origin, voxel_size, dims, sample count


@dataclass(frozen=True)
class DirectionalSample:
    """One intensity observation with the acquisition orientation it was seen from."""

    intensity: int
    orientation: Quaternion
    position: np.ndarray  # exact world-space location (mm), not voxel-center quantized

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float32).reshape(3))


@dataclass(frozen=True)
class BoundingBox:
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "min", np.asarray(self.min, dtype=float).reshape(3))
        object.__setattr__(self, "max", np.asarray(self.max, dtype=float).reshape(3))
        if np.any(self.min > self.max):
            raise InvalidArgumentError("bounding box min must be <= max componentwise")

    def expanded(self, margin: float) -> "BoundingBox":
        return BoundingBox(self.min - margin, self.max + margin)

    @property
    def extent(self) -> np.ndarray:
        return self.max - self.min


def compute_bounds(frames, margin: float = 0.0) -> BoundingBox:
    """Axis-aligned box covering the four world-space corners of every frame's
    image rectangle (extreme pixel positions), expanded by `margin` mm."""
    frames = list(frames)
    if not frames:
        raise InvalidArgumentError("compute_bounds requires at least one frame")
    lo = np.full(3, np.inf)
    hi = np.full(3, -np.inf)
    for f in frames:
        px, py = f.pixel_pitch
        umax = (f.width - 1) * px
        vmax = (f.height - 1) * py
        for u, v in ((0.0, 0.0), (umax, 0.0), (0.0, vmax), (umax, vmax)):
            corner = f.pose.apply((u, v, 0.0))
            lo = np.minimum(lo, corner)
            hi = np.maximum(hi, corner)
    return BoundingBox(lo, hi).expanded(margin)


class DirectionalVolume:
    """Sealed, immutable directional volume. Build through VolumeBuilder."""

    def __init__(self, origin, voxel_size, dims, cell_starts, cell_counts,
                 positions, orientations, intensities):
        self.origin = np.asarray(origin, dtype=float).reshape(3)
        self.voxel_size = float(voxel_size)
        self.dims = tuple(int(d) for d in dims)
        self.cell_starts = cell_starts
        self.cell_counts = cell_counts
        self.positions = positions        # (n, 3) float32
        self.orientations = orientations  # (n, 4) float32, scalar-first, w >= 0
        self.intensities = intensities    # (n,)  uint8
        for arr in (self.cell_starts, self.cell_counts, self.positions,
                    self.orientations, self.intensities):
            arr.flags.writeable = False
        self.origin.flags.writeable = False

    @property
    def sample_count(self) -> int:
        return int(self.intensities.shape[0])

    @property
    def cell_count(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    def linear_index(self, idx) -> int:
        ix, iy, iz = idx
        nx, ny, nz = self.dims
        return (ix * ny + iy) * nz + iz

    def voxel_of(self, p) -> tuple[int, int, int] | None:
        """Owning cell of a world point, or None when outside the grid.

        Half-open cells: floor((p - origin) / voxel_size). Never clamps.
        """
        p = np.asarray(p, dtype=float)
        idx = np.floor((p - self.origin) / self.voxel_size).astype(np.int64)
        if np.any(idx < 0) or np.any(idx >= np.asarray(self.dims)):
            return None
        return (int(idx[0]), int(idx[1]), int(idx[2]))

    def cell_slice(self, idx) -> slice:
        lin = self.linear_index(idx)
        start = int(self.cell_starts[lin])
        return slice(start, start + int(self.cell_counts[lin]))

    def cell_range_for_cube(self, p, radius: float) -> tuple[np.ndarray, np.ndarray] | None:
        """Inclusive cell index range touched by the cube [p-radius, p+radius],
        clamped to the grid; None when the cube misses the grid entirely.

        The range carries a 1e-9-cell guard band so float rounding can never
        exclude a cell that holds samples inside the closed cube.
        """
        p = np.asarray(p, dtype=float)
        lo = np.floor((p - radius - self.origin) / self.voxel_size - 1e-9).astype(np.int64)
        hi = np.floor((p + radius - self.origin) / self.voxel_size + 1e-9).astype(np.int64)
        dims = np.asarray(self.dims, dtype=np.int64)
        lo = np.maximum(lo, 0)
        hi = np.minimum(hi, dims - 1)
        if np.any(lo > hi):
            return None
        return lo, hi

    def gather_indices(self, p, radius: float) -> np.ndarray:
        """Flat-store indices of all samples in cells intersecting the cube
        [p-radius, p+radius], in storage (ascending) order."""
        if radius <= 0:
            raise InvalidArgumentError("gather radius must be > 0")
        rng = self.cell_range_for_cube(p, radius)
        if rng is None:
            return np.empty(0, dtype=np.int64)
        lo, hi = rng
        chunks = []
        nx, ny, nz = self.dims
        for ix in range(lo[0], hi[0] + 1):
            for iy in range(lo[1], hi[1] + 1):
                base = (ix * ny + iy) * nz
                for iz in range(lo[2], hi[2] + 1):
                    lin = base + iz
                    start = self.cell_starts[lin]
                    count = self.cell_counts[lin]
                    if count:
                        chunks.append(np.arange(start, start + count, dtype=np.int64))
        if not chunks:
            return np.empty(0, dtype=np.int64)
        return np.concatenate(chunks)

    def gather_neighborhood(self, p, radius: float) -> list[DirectionalSample]:
        """All samples whose cells intersect the cube [p-radius, p+radius].

        Callers needing the cube itself (not cell-aligned) filter afterwards,
        as the reslicer does.
        """
        idx = self.gather_indices(p, radius)
        return [
            DirectionalSample(
                intensity=int(self.intensities[i]),
                orientation=Quaternion(*(float(c) for c in self.orientations[i])),
                position=self.positions[i].copy(),
            )
            for i in idx
        ]

    def sample_at(self, i: int) -> DirectionalSample:
        return DirectionalSample(
            intensity=int(self.intensities[i]),
            orientation=Quaternion(*(float(c) for c in self.orientations[i])),
            position=self.positions[i].copy(),
        )


class VolumeBuilder:
    """Single-writer accumulation phase; seal() yields the immutable volume.

    Grid sizing: dims = floor(extent / voxel) + 1 per axis, so a frame whose
    extent is an exact voxel multiple keeps its boundary pixels in-bounds and
    a degenerate (zero-extent) axis still gets one cell.
    """

    def __init__(self, bounds: BoundingBox, voxel_size: float = DEFAULT_VOXEL_SIZE_MM):
        if voxel_size <= 0:
            raise InvalidArgumentError("voxel_size must be > 0")
        self.origin = bounds.min.copy()
        self.voxel_size = float(voxel_size)
        self.dims = tuple(int(np.floor(e / voxel_size)) + 1 for e in bounds.extent)
        self._positions: list[np.ndarray] = []
        self._orientations: list[np.ndarray] = []
        self._intensities: list[np.ndarray] = []
        self.rejected_out_of_bounds = 0

    def _voxel_indices(self, positions: np.ndarray) -> np.ndarray:
        return np.floor((positions.astype(np.float64) - self.origin) / self.voxel_size).astype(np.int64)

    def insert_sample(self, s: DirectionalSample) -> None:
        """Append one sample; out-of-bounds positions are rejected and leave
        the store unchanged."""
        pos = np.asarray(s.position, dtype=np.float32).reshape(1, 3)
        idx = self._voxel_indices(pos)[0]
        if np.any(idx < 0) or np.any(idx >= np.asarray(self.dims)):
            raise OutOfBoundsError(f"sample position {pos[0]} outside volume grid")
        q = s.orientation.normalized().canonical()
        self._positions.append(pos)
        self._orientations.append(np.array([[q.w, q.x, q.y, q.z]], dtype=np.float32))
        self._intensities.append(np.array([s.intensity], dtype=np.uint8))

    def insert_batch(self, positions, orientations, intensities) -> int:
        """Vectorized insert; silently drops out-of-bounds rows and returns
        the number rejected (tracked in rejected_out_of_bounds)."""
        pos = np.ascontiguousarray(positions, dtype=np.float32).reshape(-1, 3)
        quat = np.ascontiguousarray(orientations, dtype=np.float32).reshape(-1, 4)
        inten = np.ascontiguousarray(intensities, dtype=np.uint8).reshape(-1)
        idx = self._voxel_indices(pos)
        ok = np.all((idx >= 0) & (idx < np.asarray(self.dims)), axis=1)
        n_bad = int(np.count_nonzero(~ok))
        self.rejected_out_of_bounds += n_bad
        if n_bad:
            pos, quat, inten = pos[ok], quat[ok], inten[ok]
        self._positions.append(pos)
        self._orientations.append(quat)
        self._intensities.append(inten)
        return n_bad

    def seal(self) -> DirectionalVolume:
        """Two-pass count/fill: stable-sort samples by linearized cell index so
        per-cell runs are contiguous and insertion order survives within cells."""
        nx, ny, nz = self.dims
        ncells = nx * ny * nz
        if self._positions:
            pos = np.concatenate(self._positions)
            quat = np.concatenate(self._orientations)
            inten = np.concatenate(self._intensities)
        else:
            pos = np.empty((0, 3), dtype=np.float32)
            quat = np.empty((0, 4), dtype=np.float32)
            inten = np.empty(0, dtype=np.uint8)
        idx = self._voxel_indices(pos)
        lin = (idx[:, 0] * ny + idx[:, 1]) * nz + idx[:, 2]
        order = np.argsort(lin, kind="stable")
        pos, quat, inten, lin = pos[order], quat[order], inten[order], lin[order]
        counts = np.bincount(lin, minlength=ncells).astype(np.int64)
        starts = np.zeros(ncells, dtype=np.int64)
        np.cumsum(counts[:-1], out=starts[1:])
        return DirectionalVolume(
            origin=self.origin,
            voxel_size=self.voxel_size,
            dims=self.dims,
            cell_starts=starts,
            cell_counts=counts,
            positions=np.ascontiguousarray(pos),
            orientations=np.ascontiguousarray(quat),
            intensities=np.ascontiguousarray(inten),
        )


def save_volume(volume: DirectionalVolume, path) -> None:
    """Write the .darevol binary format (little-endian, bit-exact for equal input).

    Layout: header | per-cell (u64 sample offset, u32 count) | samples
    (3xf32 position, 4xf32 quaternion, u8 intensity, 3 pad bytes).
    """
    header = _HEADER.pack(
        VOLUME_MAGIC, VOLUME_VERSION,
        *[float(c) for c in volume.origin], volume.voxel_size,
        *volume.dims, volume.sample_count,
    )
    table = np.zeros(volume.cell_count, dtype=np.dtype([("offset", "<u8"), ("count", "<u4")]))
    table["offset"] = volume.cell_starts
    table["count"] = volume.cell_counts
    samples = np.zeros(
        volume.sample_count,
        dtype=np.dtype([("position", "<f4", 3), ("orientation", "<f4", 4),
                        ("intensity", "u1"), ("pad", "u1", 3)]),
    )
    samples["position"] = volume.positions
    samples["orientation"] = volume.orientations
    samples["intensity"] = volume.intensities
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(table.tobytes())
        fh.write(samples.tobytes())


def load_volume(path) -> DirectionalVolume:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise VolumeFormatError(f"{path}: truncated header")
    magic, version, ox, oy, oz, voxel, nx, ny, nz, count = _HEADER.unpack_from(raw, 0)
    if magic != VOLUME_MAGIC:
        raise VolumeFormatError(f"{path}: bad magic {magic!r}, expected {VOLUME_MAGIC!r}")
    if version != VOLUME_VERSION:
        raise VolumeFormatError(f"{path}: unsupported format version {version}")
    ncells = nx * ny * nz
    table_dtype = np.dtype([("offset", "<u8"), ("count", "<u4")])
    sample_dtype = np.dtype([("position", "<f4", 3), ("orientation", "<f4", 4),
                             ("intensity", "u1"), ("pad", "u1", 3)])
    off = _HEADER.size
    expected = off + ncells * table_dtype.itemsize + count * sample_dtype.itemsize
    if len(raw) != expected:
        raise VolumeFormatError(f"{path}: size {len(raw)} != expected {expected}")
    table = np.frombuffer(raw, dtype=table_dtype, count=ncells, offset=off)
    off += ncells * table_dtype.itemsize
    samples = np.frombuffer(raw, dtype=sample_dtype, count=count, offset=off)
    return DirectionalVolume(
        origin=(ox, oy, oz),
        voxel_size=voxel,
        dims=(nx, ny, nz),
        cell_starts=table["offset"].astype(np.int64),
        cell_counts=table["count"].astype(np.int64),
        positions=np.ascontiguousarray(samples["position"]),
        orientations=np.ascontiguousarray(samples["orientation"]),
        intensities=np.ascontiguousarray(samples["intensity"]),
    )

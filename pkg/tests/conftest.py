import math

import numpy as np
import pytest

from dare.geometry import Quaternion
from dare.volume import BoundingBox, DirectionalVolume, VolumeBuilder


def random_quaternion(rng: np.random.Generator) -> Quaternion:
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    return Quaternion(*q)


def random_volume(rng: np.random.Generator, n_samples: int, extent: float = 10.0,
                  voxel_size: float = 0.5) -> DirectionalVolume:
    """Random directional volume; samples uniform in a cube at the origin."""
    builder = VolumeBuilder(BoundingBox((0, 0, 0), (extent, extent, extent)), voxel_size)
    positions = rng.uniform(0, extent, size=(n_samples, 3))
    quats = rng.normal(size=(n_samples, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    quats[quats[:, 0] < 0] *= -1.0
    intensities = rng.integers(0, 256, n_samples)
    builder.insert_batch(positions, quats, intensities)
    return builder.seal()


def axis_angle_matrix(axis, angle: float) -> np.ndarray:
    """Independent rotation-matrix oracle (Rodrigues form)."""
    k = np.asarray(axis, dtype=float)
    k = k / np.linalg.norm(k)
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + math.sin(angle) * kx + (1 - math.cos(angle)) * (kx @ kx)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240809)

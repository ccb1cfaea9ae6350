"""Quaternion / rigid-pose arithmetic and image-plane axis extraction.

Conventions used throughout the package:
  * world units are millimetres, angles are radians internally
    (degrees only at configuration boundaries),
  * quaternions are scalar-first (w, x, y, z) Hamilton products,
  * image x = lateral, image y = axial/depth, image z = out-of-plane normal,
  * stored quaternions are canonicalized so that q and -q compare equal.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError

_UNIT_TOL = 1e-3  # rotate() rejects quaternions further than this from unit norm


@dataclass(frozen=True)
class Quaternion:
    """Unit quaternion (w + xi + yj + zk) representing a 3D rotation."""

    w: float
    x: float
    y: float
    z: float

    @staticmethod
    def identity() -> "Quaternion":
        return Quaternion(1.0, 0.0, 0.0, 0.0)

    @staticmethod
    def from_axis_angle(axis, angle_rad: float) -> "Quaternion":
        """Rotation of `angle_rad` about `axis` (need not be unit length)."""
        ax = np.asarray(axis, dtype=float)
        n = np.linalg.norm(ax)
        if n == 0.0:
            raise InvalidArgumentError("rotation axis must be nonzero")
        ax = ax / n
        half = 0.5 * angle_rad
        s = math.sin(half)
        return Quaternion(math.cos(half), ax[0] * s, ax[1] * s, ax[2] * s)

    def norm(self) -> float:
        return math.sqrt(self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z)

    def normalized(self) -> "Quaternion":
        n = self.norm()
        if n == 0.0:
            raise InvalidArgumentError("cannot normalize zero quaternion")
        return Quaternion(self.w / n, self.x / n, self.y / n, self.z / n)

    def canonical(self) -> "Quaternion":
        """Flip sign so w >= 0 (w == 0: first nonzero of x,y,z positive).

        Keeps directional dot products sign-stable under the q/-q double cover.
        """
        w, x, y, z = self.w, self.x, self.y, self.z
        if w < 0.0 or (w == 0.0 and (x < 0.0 or (x == 0.0 and (y < 0.0 or (y == 0.0 and z < 0.0))))):
            return Quaternion(-w, -x, -y, -z)
        return self

    def conjugate(self) -> "Quaternion":
        return Quaternion(self.w, -self.x, -self.y, -self.z)

    def multiply(self, other: "Quaternion") -> "Quaternion":
        w1, x1, y1, z1 = self.w, self.x, self.y, self.z
        w2, x2, y2, z2 = other.w, other.x, other.y, other.z
        return Quaternion(
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        )

    def rotation_matrix(self) -> np.ndarray:
        """3x3 rotation matrix; assumes unit norm."""
        w, x, y, z = self.w, self.x, self.y, self.z
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    def angle_to(self, other: "Quaternion") -> float:
        """Rotation angle (radians) between two unit quaternions, double-cover aware."""
        dot = abs(self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z)
        return 2.0 * math.acos(min(1.0, dot))


def rotate(q: Quaternion, v) -> np.ndarray:
    """Apply R(q) to a 3-vector. Rejects q further than 1e-3 from unit norm."""
    if abs(q.norm() - 1.0) > _UNIT_TOL:
        raise InvalidArgumentError(f"quaternion norm {q.norm():.6f} deviates from 1 by more than {_UNIT_TOL}")
    v = np.asarray(v, dtype=float)
    # v' = v + 2 w (u x v) + 2 u x (u x v), u = (x, y, z)
    u = np.array([q.x, q.y, q.z])
    t = 2.0 * np.cross(u, v)
    return v + q.w * t + np.cross(u, t)


@dataclass(frozen=True)
class Pose:
    """Rigid transform: rotation then translation (millimetres), mapping local -> world."""

    rotation: Quaternion
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))

    @staticmethod
    def identity() -> "Pose":
        return Pose(Quaternion.identity(), np.zeros(3))

    def apply(self, point) -> np.ndarray:
        """Transform a local point into world coordinates."""
        return rotate(self.rotation, point) + self.translation

    def compose(self, other: "Pose") -> "Pose":
        """self o other: apply `other` first, then `self`."""
        return Pose(
            self.rotation.multiply(other.rotation).normalized(),
            rotate(self.rotation, other.translation) + self.translation,
        )

    def inverse(self) -> "Pose":
        inv_rot = self.rotation.conjugate()
        return Pose(inv_rot, -rotate(inv_rot, self.translation))


@dataclass(frozen=True)
class FrameAxes:
    """Orthonormal image-plane triad in world coordinates.

    x_axis: in-plane lateral, y_axis: in-plane axial (depth),
    normal: out-of-plane, normal = x_axis x y_axis.
    """

    x_axis: np.ndarray
    y_axis: np.ndarray
    normal: np.ndarray


def frame_axes(p: Pose) -> FrameAxes:
    """World-frame image axes for a probe/plane pose."""
    r = p.rotation.rotation_matrix()
    return FrameAxes(x_axis=r[:, 0].copy(), y_axis=r[:, 1].copy(), normal=r[:, 2].copy())


def slerp(q0: Quaternion, q1: Quaternion, t: float) -> Quaternion:
    """Shortest-arc spherical interpolation; result is unit norm.

    Antipodal pairs are handled by sign flip; nearly parallel inputs fall
    back to normalized lerp for numerical stability.
    """
    a = q0.as_array()
    b = q1.as_array()
    dot = float(np.dot(a, b))
    if dot < 0.0:
        b = -b
        dot = -dot
    if dot > 0.9995:
        out = a + t * (b - a)
        out = out / np.linalg.norm(out)
        return Quaternion(*out)
    theta = math.acos(min(1.0, dot))
    sin_theta = math.sin(theta)
    w0 = math.sin((1.0 - t) * theta) / sin_theta
    w1 = math.sin(t * theta) / sin_theta
    out = w0 * a + w1 * b
    return Quaternion(*(out / np.linalg.norm(out)))

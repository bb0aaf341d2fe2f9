"""Rigid-body math: unit quaternions (scalar-first, w x y z) and poses.

A pose is a (position, quaternion) pair mapping points from the local frame
into the world frame: p_world = R(quat) @ p_local + position.
"""

from __future__ import annotations

import math

import numpy as np


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n == 0.0:
        raise ValueError("zero quaternion")
    q = q / n
    # Canonical sign: w >= 0 keeps serialized poses unique.
    if q[0] < 0.0:
        q = -q
    return q


def quat_from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    half = 0.5 * angle
    return np.concatenate(([math.cos(half)], math.sin(half) * axis))


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def cross3(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """3-vector cross product without np.cross's axis-handling overhead."""
    return np.array(
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    )


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vector v by unit quaternion q."""
    w, x, y, z = q
    u = np.array([x, y, z])
    uv = cross3(u, v)
    return np.asarray(v, dtype=float) + 2.0 * (w * uv + cross3(u, uv))


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_angle(q: np.ndarray) -> float:
    """Rotation angle of q in [0, pi]."""
    w = min(1.0, max(-1.0, abs(float(q[0]))))
    return 2.0 * math.acos(w)


def quat_to_rotvec(q: np.ndarray) -> np.ndarray:
    """Axis-angle 3-vector (angle * unit axis) of a unit quaternion."""
    q = np.asarray(q, dtype=float)
    if q[0] < 0.0:
        q = -q
    w = min(1.0, q[0])
    angle = 2.0 * math.acos(w)
    s = math.sqrt(max(0.0, 1.0 - w * w))
    if s < 1e-12:
        return 2.0 * q[1:4]  # small-angle: q ~ [1, v/2]
    return (angle / s) * q[1:4]


class Pose:
    """Rigid transform as (position, unit quaternion)."""

    __slots__ = ("position", "quaternion")

    def __init__(self, position, quaternion):
        self.position = np.asarray(position, dtype=float)
        self.quaternion = np.asarray(quaternion, dtype=float)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))

    def compose(self, other: "Pose") -> "Pose":
        """self ∘ other: apply other in self's frame."""
        return Pose(
            self.position + quat_rotate(self.quaternion, other.position),
            quat_multiply(self.quaternion, other.quaternion),
        )

    def inverse(self) -> "Pose":
        qinv = quat_conjugate(self.quaternion)
        return Pose(-quat_rotate(qinv, self.position), qinv)

    def copy(self) -> "Pose":
        return Pose(self.position.copy(), self.quaternion.copy())

    def almost_equal(self, other: "Pose", tol: float = 1e-9) -> bool:
        dq = quat_multiply(quat_conjugate(self.quaternion), other.quaternion)
        return (
            float(np.max(np.abs(self.position - other.position))) <= tol
            and quat_angle(dq) <= tol
        )

    def __repr__(self) -> str:
        p = ", ".join(f"{v:.4f}" for v in self.position)
        q = ", ".join(f"{v:.4f}" for v in self.quaternion)
        return f"Pose(({p}), ({q}))"


def pose_error(current: Pose, target: Pose) -> tuple[np.ndarray, np.ndarray]:
    """(position error, orientation error as world-frame rotation vector)."""
    dp = target.position - current.position
    dq = quat_multiply(target.quaternion, quat_conjugate(current.quaternion))
    return dp, quat_to_rotvec(quat_normalize(dq))

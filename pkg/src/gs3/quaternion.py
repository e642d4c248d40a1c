"""Unit-quaternion rotations, batched, with hand-written reverse-mode gradients.

Quaternions are stored (w, x, y, z). Every consumer normalizes on read, so
storage may drift off the unit sphere between optimizer steps; the backward
functions include the normalization Jacobian.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


def normalize_quat(q: np.ndarray) -> np.ndarray:
    """Return q / |q|. Works on (..., 4) arrays."""
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    return q / n


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrices (..., 3, 3) from quaternions (..., 4), normalizing first.

    Columns of R are the rotated frame axes expressed in the parent frame:
    R @ v rotates v from the local frame into the parent frame.
    """
    q = normalize_quat(q)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def quat_to_rotmat_backward(q: np.ndarray, dR: np.ndarray) -> np.ndarray:
    """Pull dL/dR (..., 3, 3) back to dL/dq (..., 4) for the stored (unnormalized) q.

    Chains through both the rotation-matrix formula (valid for unit q) and the
    q -> q/|q| normalization.
    """
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    u = q / n
    w, x, y, z = u[..., 0], u[..., 1], u[..., 2], u[..., 3]

    # dR/d(unit q) assembled entry by entry; dR entries indexed [..., i, j].
    d = dR
    dw = 2 * (
        -z * d[..., 0, 1] + y * d[..., 0, 2]
        + z * d[..., 1, 0] - x * d[..., 1, 2]
        - y * d[..., 2, 0] + x * d[..., 2, 1]
    )
    dx = 2 * (
        y * d[..., 0, 1] + z * d[..., 0, 2]
        + y * d[..., 1, 0] - 2 * x * d[..., 1, 1] - w * d[..., 1, 2]
        + z * d[..., 2, 0] + w * d[..., 2, 1] - 2 * x * d[..., 2, 2]
    )
    dy = 2 * (
        -2 * y * d[..., 0, 0] + x * d[..., 0, 1] + w * d[..., 0, 2]
        + x * d[..., 1, 0] + z * d[..., 1, 2]
        - w * d[..., 2, 0] + z * d[..., 2, 1] - 2 * y * d[..., 2, 2]
    )
    dz = 2 * (
        -2 * z * d[..., 0, 0] - w * d[..., 0, 1] + x * d[..., 0, 2]
        + w * d[..., 1, 0] - 2 * z * d[..., 1, 1] + y * d[..., 1, 2]
        + x * d[..., 2, 0] + y * d[..., 2, 1]
    )
    du = np.stack([dw, dx, dy, dz], axis=-1)

    # Normalization Jacobian: d(q/|q|)/dq = (I - u u^T) / |q|.
    return (du - u * np.sum(du * u, axis=-1, keepdims=True)) / n


def rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vectors v (..., 3) from the local frame into the parent frame."""
    R = quat_to_rotmat(q)
    return np.einsum("...ij,...j->...i", R, np.asarray(v, dtype=np.float64))


def rotate_inverse(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vectors from the parent frame into the local frame (R^T v)."""
    R = quat_to_rotmat(q)
    return np.einsum("...ji,...j->...i", R, np.asarray(v, dtype=np.float64))


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * angle
    return np.concatenate([[np.cos(half)], np.sin(half) * axis])


def random_unit_quats(n: int, rng: np.random.Generator) -> np.ndarray:
    q = rng.normal(size=(n, 4))
    return normalize_quat(q)


@dataclass
class Rotation:
    """A single rotation stored as a unit quaternion (w, x, y, z)."""

    q: np.ndarray = field(default_factory=lambda: IDENTITY_QUAT.copy())

    def __post_init__(self):
        self.q = normalize_quat(np.asarray(self.q, dtype=np.float64))

    @classmethod
    def identity(cls) -> "Rotation":
        return cls(IDENTITY_QUAT.copy())

    @classmethod
    def from_axis_angle(cls, axis, angle: float) -> "Rotation":
        return cls(quat_from_axis_angle(axis, angle))

    def matrix(self) -> np.ndarray:
        return quat_to_rotmat(self.q)

    def apply(self, v: np.ndarray) -> np.ndarray:
        """Local -> parent."""
        return rotate(self.q, v)

    def apply_inverse(self, v: np.ndarray) -> np.ndarray:
        """Parent -> local."""
        return rotate_inverse(self.q, v)

    def inverse(self) -> "Rotation":
        return Rotation(self.q * np.array([1.0, -1.0, -1.0, -1.0]))

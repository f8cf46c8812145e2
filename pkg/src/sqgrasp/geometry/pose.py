"""Rigid transforms."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ORTHO_TOL = 1e-9


def _orthonormalize(rotation):
    u, _, vt = np.linalg.svd(rotation)
    r = u @ vt
    if np.linalg.det(r) < 0:
        u[:, -1] *= -1
        r = u @ vt
    return r


@dataclass(frozen=True, eq=False)
class Pose:
    """A rigid transform ``x -> rotation @ x + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise ValueError("pose entries must be finite")
        if (np.abs(r.T @ r - np.eye(3)).max() > ORTHO_TOL
                or abs(np.linalg.det(r) - 1.0) > ORTHO_TOL):
            raise ValueError("rotation is not a proper orthonormal matrix")
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix, repair=False):
        """Build from a 4x4 (or 3x4) homogeneous matrix.

        With ``repair`` the rotation block is projected onto SO(3) first,
        which is useful for poses read back from text with rounding.
        """
        m = np.asarray(matrix, dtype=float)
        r = m[:3, :3]
        if repair:
            r = _orthonormalize(r)
        return cls(r, m[:3, 3])

    @classmethod
    def from_rotvec(cls, rotvec, translation):
        return cls(rotvec_to_matrix(rotvec), translation)

    def as_matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points):
        """Map points (..., 3) from this pose's local frame into its parent frame."""
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    def apply_vectors(self, vectors):
        return np.asarray(vectors, dtype=float) @ self.rotation.T

    def inverse_apply(self, points):
        """Map points from the parent frame into this pose's local frame."""
        p = np.asarray(points, dtype=float)
        return (p - self.translation) @ self.rotation

    def inverse(self):
        return Pose(self.rotation.T, -self.rotation.T @ self.translation)

    def compose(self, other):
        """Return ``self * other`` (apply ``other`` first)."""
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def __matmul__(self, other):
        return self.compose(other)

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return (np.array_equal(self.rotation, other.rotation)
                and np.array_equal(self.translation, other.translation))

    def __hash__(self):
        return hash((self.rotation.tobytes(), self.translation.tobytes()))

    def allclose(self, other, atol=1e-9):
        return (np.allclose(self.rotation, other.rotation, atol=atol)
                and np.allclose(self.translation, other.translation, atol=atol))

    def to_list(self):
        """Row-major rotation followed by translation (12 scalars)."""
        return [float(v) for v in self.rotation.ravel()] + [float(v) for v in self.translation]

    @classmethod
    def from_list(cls, values):
        v = np.asarray(values, dtype=float)
        if v.shape != (12,):
            raise ValueError("expected 12 scalars: row-major rotation then translation")
        return cls(v[:9].reshape(3, 3), v[9:])


def rotvec_to_matrix(rotvec):
    """Rodrigues' formula for an axis-angle vector."""
    w = np.asarray(rotvec, dtype=float)
    theta = np.linalg.norm(w)
    if theta < 1e-12:
        k = np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])
        return np.eye(3) + k
    k = w / theta
    kx = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + np.sin(theta) * kx + (1.0 - np.cos(theta)) * (kx @ kx)


def matrix_to_rotvec(rotation):
    from scipy.spatial.transform import Rotation

    return Rotation.from_matrix(np.asarray(rotation, dtype=float)).as_rotvec()


def look_at_rotation(forward, up_hint=(0.0, 0.0, 1.0)):
    """Rotation whose z column is ``forward`` (normalized); x, y complete a right-handed frame."""
    z = np.asarray(forward, dtype=float)
    z = z / np.linalg.norm(z)
    up = np.asarray(up_hint, dtype=float)
    if abs(np.dot(up, z)) > 0.99:
        up = np.array([1.0, 0.0, 0.0]) if abs(z[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    x = np.cross(up, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return np.column_stack([x, y, z])

"""Superquadric primitives: implicit form, spherical-product surface, radial distance."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .geometry.pose import Pose

EXPONENT_BOUNDS = (0.1, 1.9)


def fexp(base, exponent):
    """Sign-preserving power ``sign(b) * |b|**e``."""
    return np.sign(base) * np.abs(base) ** exponent


@dataclass(frozen=True, eq=False)
class Superquadric:
    """Superellipsoid with semi-axes ``axes`` and exponents ``(eps1, eps2)``.

    ``pose`` maps the canonical frame (center at the origin, principal axes
    along x, y, z) into the world.
    """

    axes: np.ndarray
    eps: np.ndarray
    pose: Pose = field(default_factory=Pose.identity)

    def __post_init__(self):
        a = np.array(self.axes, dtype=float).reshape(3)
        e = np.array(self.eps, dtype=float).reshape(2)
        if not np.all(a > 0):
            raise ValueError(f"semi-axes must be positive, got {a}")
        if not np.all((e > 0) & (e < 2)):
            raise ValueError(f"exponents must lie in (0, 2), got {e}")
        a.flags.writeable = False
        e.flags.writeable = False
        object.__setattr__(self, "axes", a)
        object.__setattr__(self, "eps", e)

    @property
    def eps1(self):
        return float(self.eps[0])

    @property
    def eps2(self):
        return float(self.eps[1])

    @property
    def center(self):
        return self.pose.translation

    def __eq__(self, other):
        if not isinstance(other, Superquadric):
            return NotImplemented
        return (np.array_equal(self.axes, other.axes) and np.array_equal(self.eps, other.eps)
                and self.pose == other.pose)

    __hash__ = None

    def to_dict(self):
        return {
            "a": [float(x) for x in self.axes],
            "eps": [float(x) for x in self.eps],
            "rotation": [float(x) for x in self.pose.rotation.ravel()],
            "translation": [float(x) for x in self.pose.translation],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["a"], d["eps"], Pose(np.reshape(d["rotation"], (3, 3)), d["translation"]))


def implicit_canonical(axes, eps, p):
    """Inside-outside function for canonical-frame points ``p`` (..., 3)."""
    e1, e2 = eps
    with np.errstate(over="ignore"):
        xy = (np.abs(p[..., 0] / axes[0]) ** (2.0 / e2)
              + np.abs(p[..., 1] / axes[1]) ** (2.0 / e2)) ** (e2 / e1)
        return xy + np.abs(p[..., 2] / axes[2]) ** (2.0 / e1)


def implicit_value(sq, points):
    """Evaluate the inside-outside function at world points: 1 on the surface, <1 inside."""
    p = np.asarray(points, dtype=float)
    f = implicit_canonical(sq.axes, sq.eps, sq.pose.inverse_apply(p))
    return float(f) if p.ndim == 1 else f


def surface_point_canonical(axes, eps, eta, omega):
    eta = np.asarray(eta, dtype=float)
    omega = np.asarray(omega, dtype=float)
    e1, e2 = eps
    ce = fexp(np.cos(eta), e1)
    return np.stack([axes[0] * ce * fexp(np.cos(omega), e2),
                     axes[1] * ce * fexp(np.sin(omega), e2),
                     axes[2] * fexp(np.sin(eta), e1) * np.ones_like(omega)], axis=-1)


def surface_point(sq, eta, omega):
    """World-frame point of the spherical-product surface at angles (eta, omega)."""
    if np.any(np.abs(eta) > np.pi / 2 + 1e-12) or np.any(np.abs(omega) > np.pi + 1e-12):
        raise ValueError("eta must lie in [-pi/2, pi/2] and omega in [-pi, pi]")
    return sq.pose.apply(surface_point_canonical(sq.axes, sq.eps, eta, omega))


def radial_distance_canonical(axes, eps, p):
    """Radial signed distance ``|p| (1 - F(p)^(-eps1/2))`` for canonical points."""
    r = np.linalg.norm(p, axis=-1)
    f = implicit_canonical(axes, eps, p)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        d = r * (1.0 - f ** (-eps[0] / 2.0))
    return np.where(r > 0, d, -np.min(axes))


def sq_signed_distance(sq, points):
    """Approximate signed distance along the ray from the center (negative inside)."""
    p = np.asarray(points, dtype=float)
    d = radial_distance_canonical(sq.axes, sq.eps, sq.pose.inverse_apply(p))
    return float(d) if p.ndim == 1 else d


def sample_surface_grid(sq, n_eta=24, n_omega=48):
    """World-frame surface points on a regular (eta, omega) grid."""
    eta = np.linspace(-np.pi / 2, np.pi / 2, n_eta)
    omega = np.linspace(-np.pi, np.pi, n_omega, endpoint=False)
    ee, oo = np.meshgrid(eta, omega, indexing="ij")
    return surface_point(sq, ee.ravel(), oo.ravel())


def dumps_sq_set(sqs, indent=2):
    return json.dumps([sq.to_dict() for sq in sqs], indent=indent)


def loads_sq_set(text):
    return [Superquadric.from_dict(d) for d in json.loads(text)]

"""Grasp validation against the object mesh: body clearance and antipodal contacts."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .geometry.mesh import min_signed_distance, sample_surface
from .graspgen import GraspCandidate

NONE = "none"
WIDTH = "width"
COLLISION = "collision"
ANTIPODAL = "antipodal"
FAILURE_REASONS = (NONE, WIDTH, COLLISION, ANTIPODAL)


@dataclass(frozen=True)
class ValidationConfig:
    """``clearance`` is the minimum allowed signed distance from gripper body to mesh."""

    clearance: float = 0.001
    antipodal_k: int = 10
    antipodal_theta: float = math.pi / 6
    contact_point_budget: int = 4096

    def __post_init__(self):
        if self.clearance < 0:
            raise ValueError("clearance must be non-negative")
        if self.antipodal_k < 1:
            raise ValueError("antipodal_k must be >= 1")
        if not 0 <= self.antipodal_theta <= math.pi / 2:
            raise ValueError("antipodal_theta must lie in [0, pi/2]")
        if self.contact_point_budget < 0:
            raise ValueError("contact_point_budget must be non-negative")

    def to_dict(self):
        return {"clearance": self.clearance, "antipodal_k": self.antipodal_k,
                "antipodal_theta": self.antipodal_theta,
                "contact_point_budget": self.contact_point_budget}


@dataclass(frozen=True, eq=False)
class ValidatedGrasp:
    """A candidate plus its verdict. ``min_clearance`` is ``None`` when never computed."""

    candidate: GraspCandidate
    valid: bool
    min_clearance: float | None
    positive_contacts: int
    negative_contacts: int
    failure_reason: str

    def __post_init__(self):
        if self.valid != (self.failure_reason == NONE):
            raise ValueError("valid must hold exactly when failure_reason is 'none'")
        if self.failure_reason not in FAILURE_REASONS:
            raise ValueError(f"unknown failure reason {self.failure_reason!r}")

    def __eq__(self, other):
        if not isinstance(other, ValidatedGrasp):
            return NotImplemented
        return (self.candidate == other.candidate and self.valid == other.valid
                and self.min_clearance == other.min_clearance
                and self.positive_contacts == other.positive_contacts
                and self.negative_contacts == other.negative_contacts
                and self.failure_reason == other.failure_reason)

    __hash__ = None

    def to_dict(self):
        d = self.candidate.to_dict()
        d.update(valid=bool(self.valid),
                 min_clearance=None if self.min_clearance is None else float(self.min_clearance),
                 positive_contacts=int(self.positive_contacts),
                 negative_contacts=int(self.negative_contacts),
                 failure_reason=self.failure_reason)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(GraspCandidate.from_dict(d), bool(d["valid"]), d["min_clearance"],
                   int(d["positive_contacts"]), int(d["negative_contacts"]), d["failure_reason"])


@dataclass(frozen=True, eq=False)
class ContactSet:
    """Object surface points with outward unit normals, indexed for box queries."""

    points: np.ndarray
    normals: np.ndarray
    tree: cKDTree | None = field(default=None, repr=False)

    @classmethod
    def build(cls, points, normals):
        p = np.asarray(points, dtype=float).reshape(-1, 3)
        n = np.asarray(normals, dtype=float).reshape(-1, 3)
        return cls(p, n, cKDTree(p) if len(p) else None)

    def __len__(self):
        return len(self.points)


def contact_set(mesh, config=None, seed=0):
    """Mesh vertices (with area-weighted normals) plus ``contact_point_budget`` surface samples."""
    config = config or ValidationConfig()
    m = mesh.with_vertex_normals()
    pts, nrm = [m.vertices], [m.vertex_normals]
    if config.contact_point_budget > 0:
        sp, sn = sample_surface(mesh, config.contact_point_budget, seed)
        pts.append(sp)
        nrm.append(sn)
    return ContactSet.build(np.vstack(pts), np.vstack(nrm))


def collision_free(gripper, pose, mesh, clearance, width=None):
    """``(min signed distance over the body points >= clearance, that minimum)``."""
    body = pose.apply(gripper.body_points(width))
    d, _ = min_signed_distance(mesh, body)
    return bool(d >= clearance), d


def _closing_region_world(gripper, pose, width):
    lo, hi = gripper.closing_region(width)
    center = pose.apply(0.5 * (lo + hi))
    return lo, hi, center, 0.5 * float(np.linalg.norm(hi - lo))


def _count_antipodal(local_pts, normals, lo, hi, f_world, theta):
    inside = np.all((local_pts >= lo) & (local_pts <= hi), axis=1)
    dots = normals[inside] @ f_world
    c = math.cos(theta)
    return int(np.count_nonzero(dots >= c)), int(np.count_nonzero(dots <= -c))


def antipodal_satisfied(gripper, pose, contacts, k, theta, width=None):
    """Count contacts inside the closing region whose normals align / oppose the closing axis.

    ``contacts`` is a :class:`ContactSet` or a ``(points, normals)`` pair.
    Returns ``(positive >= k and negative >= k, positive, negative)``.
    """
    if not isinstance(contacts, ContactSet):
        contacts = ContactSet.build(*contacts)
    if len(contacts) == 0:
        return False, 0, 0
    lo, hi, center, radius = _closing_region_world(gripper, pose, width)
    idx = np.asarray(contacts.tree.query_ball_point(center, radius * (1 + 1e-9)), dtype=np.int64)
    if len(idx) == 0:
        return False, 0, 0
    idx.sort()
    local = pose.inverse_apply(contacts.points[idx])
    f_world = pose.apply_vectors(gripper.closing_direction)
    pos, neg = _count_antipodal(local, contacts.normals[idx], lo, hi, f_world, theta)
    return (pos >= k and neg >= k), pos, neg


def antipodal_counts_naive(gripper, pose, points, normals, theta, width=None):
    """Reference count by scanning every contact point (no spatial index)."""
    lo, hi = gripper.closing_region(width)
    f_world = pose.apply_vectors(gripper.closing_direction)
    pos = neg = 0
    c = math.cos(theta)
    for p, n in zip(np.asarray(points, dtype=float), np.asarray(normals, dtype=float)):
        q = pose.inverse_apply(p)
        if np.all(q >= lo) and np.all(q <= hi):
            d = float(n @ f_world)
            pos += d >= c
            neg += d <= -c
    return pos, neg


class GraspValidator:
    """Validates candidates against one mesh, sharing the contact set and caching verdicts.

    Verdicts depend only on the candidate, never on where the gripper
    currently is, so repeated candidates (e.g. across viewpoints) are looked
    up instead of recomputed.
    """

    def __init__(self, mesh, gripper, config=None, seed=0, contacts=None):
        self.mesh = mesh
        self.gripper = gripper
        self.config = config or ValidationConfig()
        self.contacts = contacts if contacts is not None else contact_set(mesh, self.config, seed)
        self._cache = {}

    def _key(self, c):
        return (tuple(c.pose.rotation.ravel()), tuple(c.pose.translation), c.closing_width)

    def validate(self, candidate):
        key = self._key(candidate)
        hit = self._cache.get(key)
        if hit is not None:
            return ValidatedGrasp(candidate, *hit)
        verdict = self._check(candidate)
        self._cache[key] = verdict
        return ValidatedGrasp(candidate, *verdict)

    def _check(self, c):
        cfg = self.config
        if c.closing_width > self.gripper.max_opening:
            return False, None, 0, 0, WIDTH
        ok, d = collision_free(self.gripper, c.pose, self.mesh, cfg.clearance, c.closing_width)
        if not ok:
            return False, d, 0, 0, COLLISION
        good, pos, neg = antipodal_satisfied(self.gripper, c.pose, self.contacts, cfg.antipodal_k,
                                             cfg.antipodal_theta, c.closing_width)
        return good, d, pos, neg, (NONE if good else ANTIPODAL)


def validate_candidates(candidates, mesh, gripper, config=None, seed=0, validator=None):
    """Label every candidate; checks run width, then collision, then antipodal."""
    v = validator or GraspValidator(mesh, gripper, config, seed)
    return [v.validate(c) for c in candidates]


def dumps_validated(validated, indent=2):
    return json.dumps([v.to_dict() for v in validated], indent=indent)


def loads_validated(text):
    return [ValidatedGrasp.from_dict(d) for d in json.loads(text)]

"""Parallel-jaw grasp candidates sampled on a single superquadric.

Candidates live on the mid-plane section perpendicular to the shortest
semi-axis. The jaws close along that axis; the approach direction points
from the sample toward the primitive's center. For square-ish sections
(exponent < 1) the steep corner arcs are replaced by straight segments
running to the axis intercepts.

Gripper frame convention: origin at the center of the palm's inner face,
``+z`` is the approach direction, ``+y`` is the closing direction and
``x = y x z``. The fingers extend from the palm along ``+z``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DomainError
from .geometry.pose import Pose
from .superquadric import fexp

AXIS_NAMES = ("x", "y", "z")
SLOPE_THRESHOLD = 4.0
CONTINUOUS = "continuous"
ASYMPTOTE = "asymptote"

# section axes (u, v, normal) for each shortest axis; each triple is a
# cyclic permutation so the section frame stays right-handed
_SECTION_AXES = {0: (1, 2, 0), 1: (2, 0, 1), 2: (0, 1, 2)}


@dataclass(frozen=True)
class GripperModel:
    """Box-shaped parallel-jaw gripper.

    ``palm_extent`` is the palm size along the gripper (x, y, z) axes; its
    y-extent must span both fingers at full opening. Fingers share the palm's
    x-extent, are ``finger_thickness`` thick along y and ``finger_length``
    long along z. Body points are a lattice (faces included) with spacing at
    most ``lattice_pitch``.
    """

    max_opening: float = 0.08
    finger_length: float = 0.05
    finger_thickness: float = 0.01
    palm_extent: tuple = (0.02, 0.12, 0.02)
    lattice_pitch: float = 0.005

    def __post_init__(self):
        object.__setattr__(self, "palm_extent", tuple(float(x) for x in self.palm_extent))
        if not self.max_opening > 0:
            raise ValueError("max_opening must be positive")
        if not (self.finger_length > 0 and self.finger_thickness > 0 and self.lattice_pitch > 0):
            raise ValueError("finger dimensions and lattice pitch must be positive")
        if len(self.palm_extent) != 3 or min(self.palm_extent) <= 0:
            raise ValueError("palm_extent must be three positive lengths")
        if self.palm_extent[1] < self.max_opening + 2 * self.finger_thickness - 1e-12:
            raise ValueError("palm must span both fingers at full opening")

    @property
    def closing_direction(self):
        return np.array([0.0, 1.0, 0.0])

    @property
    def approach_direction(self):
        return np.array([0.0, 0.0, 1.0])

    def closing_region(self, width=None):
        """Axis-aligned box ``(lo, hi)`` between the fingers, in the gripper frame."""
        w = self._width(width)
        hx = 0.5 * self.palm_extent[0]
        return np.array([-hx, -w / 2, 0.0]), np.array([hx, w / 2, self.finger_length])

    def body_points(self, width=None):
        """Palm and finger lattice points (N, 3) with the jaws opened to ``width``."""
        pts = _body_lattice(self._width(width), self.finger_length, self.finger_thickness,
                            self.palm_extent, self.lattice_pitch)
        return pts.copy()

    def _width(self, width):
        w = self.max_opening if width is None else float(width)
        if not 0 < w <= self.max_opening + 1e-12:
            raise ValueError(f"opening {w} outside (0, {self.max_opening}]")
        return w

    def to_dict(self):
        return {"max_opening": self.max_opening, "finger_length": self.finger_length,
                "finger_thickness": self.finger_thickness,
                "palm_extent": list(self.palm_extent), "lattice_pitch": self.lattice_pitch}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _box_lattice(lo, hi, pitch):
    axes = [np.linspace(lo[k], hi[k], max(2, int(math.ceil((hi[k] - lo[k]) / pitch - 1e-9)) + 1))
            for k in range(3)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)


@lru_cache(maxsize=64)
def _body_lattice(width, length, thickness, palm, pitch):
    hx, hy, pz = 0.5 * palm[0], 0.5 * palm[1], palm[2]
    parts = [_box_lattice((-hx, -hy, -pz), (hx, hy, 0.0), pitch)]
    for s in (-1.0, 1.0):
        y0, y1 = sorted((s * width / 2, s * (width / 2 + thickness)))
        parts.append(_box_lattice((-hx, y0, 0.0), (hx, y1, length), pitch))
    pts = np.vstack(parts)
    pts.flags.writeable = False
    return pts


@dataclass(frozen=True)
class SamplingConfig:
    l_t: float = 0.01
    samples_per_quadrant: int = 8
    asymptote_samples: int = 4
    slope_threshold: float = SLOPE_THRESHOLD
    generate_flipped: bool = True

    def __post_init__(self):
        if self.l_t < 0:
            raise ValueError("l_t must be non-negative")
        if self.samples_per_quadrant < 1 or self.asymptote_samples < 1:
            raise ValueError("sample counts must be >= 1")
        if not self.slope_threshold > 0:
            raise ValueError("slope_threshold must be positive")

    def to_dict(self):
        return {"l_t": self.l_t, "samples_per_quadrant": self.samples_per_quadrant,
                "asymptote_samples": self.asymptote_samples,
                "slope_threshold": self.slope_threshold,
                "generate_flipped": self.generate_flipped}


@dataclass(frozen=True, eq=False)
class GraspCandidate:
    """Gripper pose (gripper frame -> world) proposed on primitive ``source_sq``.

    ``omega`` is the section angle for curve samples and ``None`` for
    samples on the straight corner segments (see ``region_tag``).
    """

    pose: Pose
    source_sq: int
    omega: float | None
    closing_width: float
    region_tag: str = CONTINUOUS

    def __eq__(self, other):
        if not isinstance(other, GraspCandidate):
            return NotImplemented
        return (self.pose == other.pose and self.source_sq == other.source_sq
                and self.omega == other.omega and self.closing_width == other.closing_width
                and self.region_tag == other.region_tag)

    __hash__ = None

    def to_dict(self):
        return {"rotation": [float(x) for x in self.pose.rotation.ravel()],
                "translation": [float(x) for x in self.pose.translation],
                "source_sq": int(self.source_sq),
                "omega": None if self.omega is None else float(self.omega),
                "closing_width": float(self.closing_width),
                "region_tag": self.region_tag}

    @classmethod
    def from_dict(cls, d):
        return cls(Pose(np.reshape(d["rotation"], (3, 3)), d["translation"]), int(d["source_sq"]),
                   d.get("omega"), float(d["closing_width"]), d.get("region_tag", CONTINUOUS))


class CandidateList(list):
    """List of candidates that also remembers how many were dropped for width."""

    def __init__(self, items=(), rejected_width=0):
        super().__init__(items)
        self.rejected_width = int(rejected_width)


@dataclass(frozen=True)
class SectionSample:
    point: np.ndarray
    tangent: np.ndarray
    region: str
    omega: float | None


# --------------------------------------------------------------------------- section geometry


def shortest_axis_frame(sq):
    """Index of the shortest semi-axis and the pose of the section plane.

    The section frame's x/y axes span the plane through the center normal to
    the shortest axis, and its z axis is that shortest axis. Ties prefer z,
    then y, then x.
    """
    a = sq.axes
    axis = 2
    for k in (1, 0):
        if a[k] < a[axis]:
            axis = k
    u, v, n = _SECTION_AXES[axis]
    perm = np.zeros((3, 3))
    perm[u, 0] = perm[v, 1] = perm[n, 2] = 1.0
    return axis, Pose(sq.pose.rotation @ perm, sq.pose.translation)


def section_shape(sq):
    """Semi-axes ``(a_u, a_v)`` and exponent of the mid-plane section curve.

    Cutting at ``z = 0`` leaves the ``eps2`` superellipse; cutting normal to x
    or y leaves one governed by ``eps1``.
    """
    axis, _ = shortest_axis_frame(sq)
    u, v, _ = _SECTION_AXES[axis]
    exponent = sq.eps2 if axis == 2 else sq.eps1
    return float(sq.axes[u]), float(sq.axes[v]), exponent


def boundary_omegas(a_x, a_y, eps2, threshold=SLOPE_THRESHOLD):
    """Angles where the section-curve slopes reach ``threshold`` in the first quadrant.

    With ``x'(w) = -a_x e sin(w)^(e-1)`` and ``y'(w) = a_y e cos(w)^(e-1)``,
    solving ``x' = -threshold`` and ``y' = threshold`` gives the closed forms
    used here. Only meaningful for ``eps2 < 1``.
    """
    if not eps2 < 1:
        raise DomainError(f"no slope discontinuity for exponent {eps2} >= 1")
    if not threshold > 0:
        raise DomainError("threshold must be positive")
    p = 1.0 / (1.0 - eps2)
    s1 = (a_x * eps2 / threshold) ** p
    c2 = (a_y * eps2 / threshold) ** p
    if s1 >= 1 or c2 >= 1:
        raise DomainError("slope never reaches the threshold on this section")
    w1, w2 = math.asin(s1), math.acos(c2)
    if not w1 < w2:
        raise DomainError("boundary angles are not ordered for this section")
    return w1, w2


def section_slopes(a_x, a_y, eps2, omega):
    """The derivative pair ``(x'(w), y'(w))`` whose magnitude defines the boundary points."""
    return (-a_x * eps2 * math.sin(omega) ** (eps2 - 1.0),
            a_y * eps2 * math.cos(omega) ** (eps2 - 1.0))


def _curve_point(au, av, e, omega):
    return np.stack([au * fexp(np.cos(omega), e), av * fexp(np.sin(omega), e)], axis=-1)


def _curve_tangent(au, av, e, pts):
    """Counter-clockwise unit tangent from the implicit-curve gradient."""
    gu = np.sign(pts[:, 0]) * np.abs(pts[:, 0] / au) ** (2.0 / e - 1.0) / au
    gv = np.sign(pts[:, 1]) * np.abs(pts[:, 1] / av) ** (2.0 / e - 1.0) / av
    t = np.stack([-gv, gu], axis=-1)
    return t / np.linalg.norm(t, axis=1, keepdims=True)


def _first_quadrant(au, av, e, config):
    """First-quadrant samples on the offset section: (points, tangents, regions, omegas)."""
    n = config.samples_per_quadrant
    bu, bv = au + config.l_t, av + config.l_t
    try:
        w1, w2 = boundary_omegas(au, av, e, config.slope_threshold) if e < 1 else (None, None)
    except DomainError:
        w1 = w2 = None
    if w1 is None:
        omegas = 0.5 * np.pi * np.arange(n) / n
        pts = _curve_point(bu, bv, e, omegas)
        return pts, _curve_tangent(bu, bv, e, pts), [CONTINUOUS] * n, list(omegas)

    omegas = np.linspace(w1, w2, n)
    pts = _curve_point(bu, bv, e, omegas)
    tans = _curve_tangent(bu, bv, e, pts)
    regions = [CONTINUOUS] * n
    om = list(omegas)
    m = config.asymptote_samples
    frac = np.arange(1, m + 1)[:, None] / m
    for start, end in ((pts[0], np.array([bu, 0.0])), (pts[-1], np.array([0.0, bv]))):
        seg = start + frac * (end - start)
        d = (end - start) / np.linalg.norm(end - start)
        pts = np.vstack([pts, seg])
        tans = np.vstack([tans, np.repeat(d[None], m, axis=0)])
        regions += [ASYMPTOTE] * m
        om += [None] * m
    return pts, tans, regions, om


def _mirror_omega(omega, su, sv):
    if omega is None:
        return None
    if su > 0 and sv > 0:
        return omega
    if su < 0 and sv > 0:
        return math.pi - omega
    if su < 0:
        return omega - math.pi
    return -omega


def sample_cross_section(sq, config=None):
    """2D samples on the offset section curve, mirrored into all four quadrants.

    Coordinates are in the section frame of :func:`shortest_axis_frame`.
    """
    config = config or SamplingConfig()
    au, av, e = section_shape(sq)
    pts, tans, regions, omegas = _first_quadrant(au, av, e, config)
    out = []
    for su, sv in ((1, 1), (-1, 1), (-1, -1), (1, -1)):
        s = np.array([su, sv], dtype=float)
        # a reflection reverses the traversal direction of the tangent
        flip = 1.0 if su * sv > 0 else -1.0
        for p, t, r, w in zip(pts, tans, regions, omegas):
            out.append(SectionSample(p * s, flip * t * s, r, _mirror_omega(w, su, sv)))
    return out


# --------------------------------------------------------------------------- candidates


def candidates_on_sq(sq, gripper, config=None, source_index=0):
    """Grasp poses around the mid-plane section of ``sq``.

    The jaws close along the shortest axis with opening ``2 a_min + 2 l_t``;
    when that exceeds the gripper's opening every sample is rejected and the
    result is empty (see ``rejected_width``).
    """
    config = config or SamplingConfig()
    axis, frame = shortest_axis_frame(sq)
    width = 2.0 * float(sq.axes[axis]) + 2.0 * config.l_t
    samples = sample_cross_section(sq, config)
    per_sample = 2 if config.generate_flipped else 1
    if width > gripper.max_opening:
        return CandidateList([], rejected_width=len(samples) * per_sample)

    closing = frame.rotation[:, 2]
    flip = np.diag([-1.0, -1.0, 1.0])
    out = CandidateList()
    for s in samples:
        approach = frame.rotation @ np.array([-s.point[0], -s.point[1], 0.0])
        approach /= np.linalg.norm(approach)
        x = np.cross(closing, approach)
        rot = np.column_stack([x, closing, approach])
        center = frame.apply(np.array([s.point[0], s.point[1], 0.0]))
        out.append(GraspCandidate(Pose(rot, center), source_index, s.omega, width, s.region))
        if config.generate_flipped:
            out.append(GraspCandidate(Pose(rot @ flip, center), source_index, s.omega, width,
                                      s.region))
    return out


def dumps_candidates(candidates, indent=2):
    return json.dumps([c.to_dict() for c in candidates], indent=indent)


def loads_candidates(text):
    return [GraspCandidate.from_dict(d) for d in json.loads(text)]

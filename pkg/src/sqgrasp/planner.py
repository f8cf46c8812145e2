"""Closest-primitive grasp planning and the viewpoint evaluation protocol."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .decompose import DecompositionConfig, marching_primitives
from .geometry.pose import Pose, look_at_rotation
from .graspgen import GripperModel, SamplingConfig, candidates_on_sq
from .sdfgrid import DEFAULT_RESOLUTION, build_sdf
from .validate import WIDTH, GraspValidator, ValidationConfig

log = logging.getLogger(__name__)

DEFAULT_BUDGET = 50
N_VIEWPOINTS = 8
RADIUS_FACTORS = (1.5, 2.5)
ELEVATION_RANGE_DEG = (15.0, 75.0)
CLOSEST = "closest"
FARTHEST = "farthest"
CSV_COLUMNS = ("object", "method", "mRD_deg", "mTD", "mNum")
ABSENT = "NA"


@dataclass(frozen=True)
class PlanRequest:
    gripper_pose: Pose
    candidate_budget: int = DEFAULT_BUDGET
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    validation: ValidationConfig = field(default_factory=ValidationConfig)

    def __post_init__(self):
        if self.candidate_budget < 1:
            raise ValueError("candidate_budget must be >= 1")


@dataclass
class PlanResult:
    """Everything validated while planning, in visiting order.

    ``tallies`` maps each visited primitive index to a count of failure
    reasons (``width`` counts candidates dropped before validation).
    """

    grasps: list
    visited: list
    chosen_sq: int | None
    tallies: dict

    @property
    def valid(self):
        return [g for g in self.grasps if g.valid]

    def tally_json(self):
        return json.dumps({"visited": self.visited, "chosen_sq": self.chosen_sq,
                           "tallies": {str(k): v for k, v in self.tallies.items()}}, indent=2)


@dataclass(frozen=True)
class EvalMetrics:
    """Headline metrics over all valid grasps, plus the nearest-grasp-per-view variant.

    Rotational/translational means are ``None`` when no viewpoint produced a
    valid grasp.
    """

    mNum: float
    mRD: float | None
    mTD: float | None
    closest_mRD: float | None = None
    closest_mTD: float | None = None


def stride_subsample(items, budget):
    """At most ``budget`` items picked at evenly spaced indices."""
    n = len(items)
    if n <= budget:
        return list(items)
    return [items[(k * n) // budget] for k in range(budget)]


def _primitives(decomposition):
    """Accept a :class:`~sqgrasp.decompose.Decomposition` or a plain list of primitives."""
    return list(getattr(decomposition, "primitives", decomposition))


def sq_visit_order(decomposition, position, order=CLOSEST):
    """Primitive indices sorted by center distance to ``position``; ties go to the lower index."""
    d = [float(np.linalg.norm(sq.center - position)) for sq in _primitives(decomposition)]
    idx = list(range(len(d)))
    if order == CLOSEST:
        return sorted(idx, key=lambda i: (d[i], i))
    if order == FARTHEST:
        return sorted(idx, key=lambda i: (-d[i], i))
    raise ValueError(f"unknown visiting order {order!r}")


def plan_grasps(decomposition, mesh, gripper, request, validator=None, order=CLOSEST):
    """Visit primitives nearest-first until one yields a valid grasp or the budget runs out."""
    primitives = _primitives(decomposition)
    if not primitives:
        raise ValueError("empty decomposition")
    v = validator or GraspValidator(mesh, gripper, request.validation)
    remaining = request.candidate_budget
    grasps, visited, tallies = [], [], {}
    chosen = None
    for i in sq_visit_order(primitives, request.gripper_pose.translation, order):
        if remaining <= 0:
            break
        cands = candidates_on_sq(primitives[i], gripper, request.sampling, i)
        visited.append(i)
        tally = {WIDTH: cands.rejected_width} if cands.rejected_width else {}
        picked = stride_subsample(cands, remaining)
        remaining -= len(picked)
        results = [v.validate(c) for c in picked]
        for r in results:
            tally[r.failure_reason] = tally.get(r.failure_reason, 0) + 1
        tallies[i] = tally
        grasps.extend(results)
        if any(r.valid for r in results):
            chosen = i
            break
    return PlanResult(grasps, visited, chosen, tallies)


def generate_viewpoints(bbox, seed):
    """Eight gripper poses looking at the box center from two upper half-spheres."""
    lo, hi = (np.asarray(b, dtype=float) for b in bbox)
    if not np.all(hi >= lo):
        raise ValueError("bounding box must have lo <= hi")
    center = 0.5 * (lo + hi)
    diag = float(np.linalg.norm(hi - lo))
    if diag <= 0:
        raise ValueError("bounding box is empty")
    rng = np.random.default_rng(seed)
    per = N_VIEWPOINTS // len(RADIUS_FACTORS)
    el_lo, el_hi = np.radians(ELEVATION_RANGE_DEG)
    poses = []
    for factor in RADIUS_FACTORS:
        r = factor * diag
        for _ in range(per):
            az = rng.uniform(0.0, 2.0 * math.pi)
            el = rng.uniform(el_lo, el_hi)
            offset = r * np.array([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az),
                                   math.sin(el)])
            poses.append(Pose(look_at_rotation(-offset), center + offset))
    return poses


def rotational_difference(r_grasp, r_gripper):
    """Mean absolute intrinsic XYZ Euler angle (degrees) of ``r_grasp @ r_gripper.T``."""
    angles = Rotation.from_matrix(np.asarray(r_grasp) @ np.asarray(r_gripper).T).as_euler(
        "XYZ", degrees=True)
    return float(np.mean(np.abs(angles)))


def compute_metrics(validated_per_view, gripper_poses):
    if len(validated_per_view) != len(gripper_poses):
        raise ValueError("need one validated set per viewpoint")
    if not gripper_poses:
        raise ValueError("no viewpoints")
    counts, rd, td, crd, ctd = [], [], [], [], []
    for grasps, pose in zip(validated_per_view, gripper_poses):
        valid = [g for g in grasps if g.valid]
        counts.append(len(valid))
        if not valid:
            continue
        r = [rotational_difference(g.candidate.pose.rotation, pose.rotation) for g in valid]
        t = [float(np.linalg.norm(g.candidate.pose.translation - pose.translation)) for g in valid]
        rd += r
        td += t
        k = int(np.argmin(t))
        crd.append(r[k])
        ctd.append(t[k])
    mean = (lambda xs: float(np.mean(xs)) if xs else None)
    return EvalMetrics(float(np.mean(counts)), mean(rd), mean(td), mean(crd), mean(ctd))


@dataclass(frozen=True)
class EvaluationConfig:
    resolution: int = DEFAULT_RESOLUTION
    candidate_budget: int = DEFAULT_BUDGET
    decomposition: DecompositionConfig = field(default_factory=DecompositionConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    validation: ValidationConfig = field(default_factory=ValidationConfig)


@dataclass
class EvaluationResult:
    name: str
    metrics: EvalMetrics
    viewpoints: list
    plans: list
    decomposition: object
    runtime_s: float = 0.0

    def detail(self):
        """Per-viewpoint records (JSON-ready)."""
        out = []
        for pose, plan in zip(self.viewpoints, self.plans):
            valid = plan.valid
            closest = None
            if valid:
                k = int(np.argmin([np.linalg.norm(g.candidate.pose.translation - pose.translation)
                                   for g in valid]))
                closest = valid[k].to_dict()
            out.append({"viewpoint_pose": pose.to_list(), "chosen_sq": plan.chosen_sq,
                        "valid_count": len(valid), "closest_grasp": closest,
                        "visited": plan.visited})
        return out


def evaluate_object(mesh, gripper, config=None, seed=0, name="object", decomposition=None,
                    order=CLOSEST):
    """SDF, one decomposition, then planning from each of the eight viewpoints."""
    config = config or EvaluationConfig()
    t0 = time.perf_counter()
    if decomposition is None:
        grid = build_sdf(mesh, config.resolution)
        decomposition = marching_primitives(grid, config.decomposition)
    validator = GraspValidator(mesh, gripper, config.validation, seed)
    views = generate_viewpoints(mesh.bounds, seed)
    plans = []
    for pose in views:
        req = PlanRequest(pose, config.candidate_budget, config.sampling, config.validation)
        plans.append(plan_grasps(decomposition, mesh, gripper, req, validator, order))
    metrics = compute_metrics([p.grasps for p in plans], views)
    log.info("%s: mNum=%.3f mRD=%s mTD=%s", name, metrics.mNum, metrics.mRD, metrics.mTD)
    return EvaluationResult(name, metrics, views, plans, decomposition,
                            time.perf_counter() - t0)


def _fmt(x):
    return ABSENT if x is None else f"{x:.6f}"


def report_rows(result, method="closest_sq"):
    m = result.metrics
    return [
        {"object": result.name, "method": method, "mRD_deg": _fmt(m.mRD), "mTD": _fmt(m.mTD),
         "mNum": _fmt(m.mNum)},
        {"object": result.name, "method": method + "/nearest_grasp", "mRD_deg": _fmt(m.closest_mRD),
         "mTD": _fmt(m.closest_mTD), "mNum": _fmt(m.mNum)},
    ]


def report_csv(rows):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()

"""Superquadric decomposition of a truncated SDF grid.

Primitives are extracted one at a time: seed at the deepest uncovered voxel,
grow a region through rising isolevels until it would swallow another basin,
fit a superquadric to the SDF samples around that region by bounded
trust-region least squares, then mark the interior voxels it explains as
covered.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage
from scipy.optimize import least_squares
from scipy.spatial import cKDTree

from .errors import EmptyObjectError, InsufficientDataError, NumericalError
from .geometry.pose import Pose, matrix_to_rotvec, rotvec_to_matrix
from .superquadric import (EXPONENT_BOUNDS, Superquadric, radial_distance_canonical,
                           sample_surface_grid, sq_signed_distance)
from .sdfgrid import sample_clamped

log = logging.getLogger(__name__)

N_PARAMS = 11
LEVEL_RATIO = 0.75
MIN_BASIN = 27
ACTIVE_BAND = 2
SHELL_VOXELS = 2.0
ACCEPT_FACTOR = 4.0
NO_PROGRESS_ROUNDS = 3
GROW_STEP = 3
MIN_GROWTH = 0.01
MAX_OVERREACH = 0.05
OVERREACH_VOXELS = 2.0
MAX_GROW_ROUNDS = 20


@dataclass
class DecompositionConfig:
    """Knobs for :func:`marching_primitives`.

    Lengths left as ``None`` are derived from the grid: the residual
    tolerance defaults to 1.5 voxels, the axis bounds to [2 voxels, grid
    diagonal].
    """

    max_primitives: int = 50
    residual_tolerance: float | None = None
    interior_coverage_stop: float = 0.99
    exponent_bounds: tuple = EXPONENT_BOUNDS
    axis_bounds: tuple | None = None
    max_fit_iterations: int = 200
    max_fit_voxels: int = 6000
    prune_budget: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.max_primitives < 1:
            raise ValueError("max_primitives must be >= 1")
        if not 0 < self.interior_coverage_stop <= 1:
            raise ValueError("interior_coverage_stop must lie in (0, 1]")
        lo, hi = self.exponent_bounds
        if not 0 < lo < hi < 2:
            raise ValueError("exponent bounds must satisfy 0 < lo < hi < 2")
        if self.residual_tolerance is not None and self.residual_tolerance <= 0:
            raise ValueError("residual_tolerance must be positive")
        if self.axis_bounds is not None and not 0 < self.axis_bounds[0] < self.axis_bounds[1]:
            raise ValueError("axis bounds must satisfy 0 < lo < hi")
        if not 0 <= self.prune_budget < 1:
            raise ValueError("prune_budget must lie in [0, 1)")
        if self.max_fit_iterations < 1 or self.max_fit_voxels < N_PARAMS:
            raise ValueError("iteration and voxel caps must be positive")

    def resolved(self, grid):
        """Copy with grid-dependent defaults filled in."""
        diag = float(np.linalg.norm(np.array(grid.dims) * grid.spacing))
        return DecompositionConfig(
            max_primitives=self.max_primitives,
            residual_tolerance=(self.residual_tolerance if self.residual_tolerance is not None
                                else 1.5 * grid.spacing),
            interior_coverage_stop=self.interior_coverage_stop,
            exponent_bounds=tuple(self.exponent_bounds),
            axis_bounds=(tuple(self.axis_bounds) if self.axis_bounds is not None
                         else (2.0 * grid.spacing, diag)),
            max_fit_iterations=self.max_fit_iterations,
            max_fit_voxels=self.max_fit_voxels,
            prune_budget=self.prune_budget,
            seed=self.seed,
        )

    def to_dict(self):
        d = asdict(self)
        d["exponent_bounds"] = list(self.exponent_bounds)
        d["axis_bounds"] = None if self.axis_bounds is None else list(self.axis_bounds)
        return d


@dataclass
class Decomposition:
    primitives: list
    per_primitive_residual: list
    coverage: float
    assignment: np.ndarray = field(repr=False)
    coverage_history: list = field(default_factory=list)
    runtime_ms: float = 0.0


# --------------------------------------------------------------------------- fitting


def _pack(sq):
    return np.concatenate([sq.axes, sq.eps, sq.pose.translation, matrix_to_rotvec(sq.pose.rotation)])


def _unpack(x):
    return Superquadric(x[:3], x[3:5], Pose(rotvec_to_matrix(x[8:11]), x[5:8]))


def _bounds(config):
    alo, ahi = config.axis_bounds
    elo, ehi = config.exponent_bounds
    lo = np.array([alo] * 3 + [elo] * 2 + [-np.inf] * 6)
    hi = np.array([ahi] * 3 + [ehi] * 2 + [np.inf] * 6)
    return lo, hi


def _model(x, pts, delta):
    r = rotvec_to_matrix(x[8:11])
    local = (pts - x[5:8]) @ r
    d = radial_distance_canonical(x[:3], x[3:5], local)
    return np.clip(d, -delta, delta)


def _voxel_weights(values, delta):
    return np.exp(-np.abs(values) / delta)


def fit_objective(grid, active_voxels, sq):
    """Weighted sum of squared SDF mismatches over ``active_voxels``."""
    idx = np.asarray(active_voxels).reshape(-1, 3)
    v = grid.values[tuple(idx.T)].astype(float)
    pts = grid.centers(idx)
    d = _model(_pack(sq), pts, grid.truncation)
    return float(np.sum(_voxel_weights(v, grid.truncation) * (v - d) ** 2))


def fit_superquadric(grid, active_voxels, init, config):
    """Fit one superquadric to the SDF samples at ``active_voxels`` (N, 3 integer indices).

    Returns ``(superquadric, rms)`` with the unweighted RMS mismatch over all
    active voxels.
    """
    idx = np.asarray(active_voxels).reshape(-1, 3)
    if len(idx) < N_PARAMS:
        raise InsufficientDataError(
            f"{len(idx)} active voxels cannot determine {N_PARAMS} parameters")
    if config.axis_bounds is None or config.residual_tolerance is None:
        config = config.resolved(grid)
    delta = grid.truncation
    v_all = grid.values[tuple(idx.T)].astype(float)
    pts_all = grid.centers(idx)

    sub = _subsample(v_all, delta, config.max_fit_voxels, config.seed)
    v, pts = v_all[sub], pts_all[sub]
    sw = np.sqrt(_voxel_weights(v, delta))

    lo, hi = _bounds(config)
    x0 = np.clip(_pack(init), lo, hi)
    last_finite = {"x": x0.copy()}

    def residuals(x):
        r = sw * (v - _model(x, pts, delta))
        if np.all(np.isfinite(r)):
            last_finite["x"] = x.copy()
        return r

    r0 = residuals(x0)
    if not np.all(np.isfinite(r0)):
        raise NumericalError("objective is not finite at the initial guess", _unpack(x0))
    try:
        res = least_squares(residuals, x0, bounds=(lo, hi), method="trf",
                            x_scale="jac", max_nfev=config.max_fit_iterations,
                            ftol=1e-10, xtol=1e-10, gtol=1e-10)
    except ValueError as exc:  # raised by scipy on non-finite residuals
        raise NumericalError(f"optimizer diverged: {exc}", _unpack(last_finite["x"])) from None
    if not np.all(np.isfinite(res.fun)):
        raise NumericalError("optimizer produced a non-finite objective", _unpack(last_finite["x"]))
    x = np.clip(res.x, lo, hi)
    sq = _unpack(x)
    rms = float(np.sqrt(np.mean((v_all - _model(x, pts_all, delta)) ** 2)))
    return sq, rms


def surface_residual(grid, active_voxels, sq, band=2.0):
    """RMS mismatch restricted to active voxels within ``band`` voxels of the zero level.

    The radial distance is only a faithful SDF near the surface, so this is
    the quantity that separates a good part fit from a poor one.
    """
    idx = np.asarray(active_voxels).reshape(-1, 3)
    v = grid.values[tuple(idx.T)].astype(float)
    near = np.abs(v) < band * grid.spacing
    if not near.any():
        return np.inf
    d = sq_signed_distance(sq, grid.centers(idx[near]))
    return float(np.sqrt(np.mean((v[near] - d) ** 2)))


def overreach(grid, sq, n_eta=12, n_omega=24):
    """Fraction of surface samples of ``sq`` lying more than two voxels outside the object.

    Samples off the grid count as outside: nothing there supports the fit.
    """
    vals, inside = sample_clamped(grid, sample_surface_grid(sq, n_eta, n_omega))
    return float(np.mean(~inside | (vals > OVERREACH_VOXELS * grid.spacing)))


def _subsample(values, delta, cap, seed):
    """Deterministic subset of at most ``cap`` indices, favouring unclamped samples."""
    n = len(values)
    if n <= cap:
        return np.arange(n)
    rng = np.random.default_rng(seed)
    clamped = np.flatnonzero(np.abs(values) >= delta * (1 - 1e-6))
    free = np.flatnonzero(np.abs(values) < delta * (1 - 1e-6))
    n_clamped = min(len(clamped), cap // 4)
    n_free = min(len(free), cap - n_clamped)
    n_clamped = min(len(clamped), cap - n_free)
    pick = np.concatenate([rng.choice(free, n_free, replace=False),
                           rng.choice(clamped, n_clamped, replace=False)])
    return np.sort(pick)


def moment_init(points, exponent=1.0, axis_bounds=None):
    """Ellipsoid from the centroid and principal directions of ``points``."""
    c = points.mean(axis=0)
    cov = np.cov((points - c).T) if len(points) > 1 else np.zeros((3, 3))
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    if np.linalg.det(evecs) < 0:
        evecs[:, 2] *= -1
    axes = 2.0 * np.sqrt(np.maximum(evals, 0.0))
    if axis_bounds is not None:
        axes = np.clip(axes, *axis_bounds)
    else:
        axes = np.maximum(axes, 1e-6)
    return Superquadric(axes, (exponent, exponent), Pose(evecs, c))


# --------------------------------------------------------------------------- region growth


def isolevels(v_min, spacing, ratio=LEVEL_RATIO):
    """Geometric schedule from ``v_min`` (< 0) up toward zero, stopping near a quarter voxel."""
    levels = [v_min]
    floor = -0.25 * spacing
    while levels[-1] * ratio < floor:
        levels.append(levels[-1] * ratio)
    return levels


def grow_region(values, candidates, seed, spacing, min_basin=MIN_BASIN):
    """Connected sublevel region around ``seed`` that stops before merging basins.

    Returns ``(mask, level)`` where ``level`` is the last isolevel used.
    """
    v_min = float(values[seed])
    prev_labels = None
    prev_region = None
    prev_level = v_min
    for level in isolevels(v_min, spacing):
        mask = candidates & (values <= level)
        labels, _ = ndimage.label(mask)
        region = labels == labels[seed]
        if prev_labels is not None:
            met = np.unique(prev_labels[region])
            met = met[(met != 0) & (met != prev_labels[seed])]
            if len(met):
                sizes = np.bincount(prev_labels[np.isin(prev_labels, met)])
                if sizes.max() >= min_basin:
                    return prev_region, prev_level
        prev_labels, prev_region, prev_level = labels, region, level
    return prev_region, prev_level


def _active_set(grid, region, level, usable):
    """Voxels near the zero level around ``region``, limited to ``usable`` ones.

    Only a thin shell on both sides of the surface is kept: the radial
    distance overestimates depth inside flat parts and overestimates
    clearance outside near edges, so a symmetric band lets the two biases
    cancel instead of shrinking the fit.
    """
    steps = int(np.ceil(abs(level) / grid.spacing)) + ACTIVE_BAND
    grown = ndimage.binary_dilation(region, iterations=steps)
    shell = np.abs(grid.values) <= SHELL_VOXELS * grid.spacing
    return grown & usable & shell


def _seed_component(mask, seed):
    labels, _ = ndimage.label(mask)
    if labels[seed] == 0:
        return None
    return labels == labels[seed]


def _grow_consistent(grid, seed, centers, config):
    """Grow a part outward from a small ball around ``seed`` while one primitive still fits.

    Each round dilates the current part by ``GROW_STEP`` voxels, refits from
    the previous primitive, and keeps the seed-connected voxels the new fit
    explains. Growth stops once the fit starts claiming clearly exterior
    voxels or stops gaining ground, so a thin slab ends where a leg or a
    backrest branches off. (The near-surface residual is no use here: the
    radial distance is biased inside thin slabs and grows with their extent.)

    Growth may run through voxels already covered by earlier primitives, so
    a part is not cut short by a small primitive fitted at a junction.
    """
    inside = grid.values < 0
    usable = np.ones(grid.dims, dtype=bool)
    # the SDF value at the seed is the radius of a ball that fits inside
    radius = max(3.0, abs(float(grid.values[seed])) / grid.spacing)
    idx = np.indices(grid.dims)
    dist2 = sum((idx[k] - seed[k]) ** 2 for k in range(3))
    part = _seed_component(inside & (dist2 <= radius ** 2), seed)
    if part is None or part.sum() < N_PARAMS:
        return None, np.inf, part
    try:
        init = moment_init(centers[part], axis_bounds=config.axis_bounds)
        active = np.argwhere(_active_set(grid, part, 0.0, usable))
        sq, rms = fit_superquadric(grid, active, init, config)
    except (InsufficientDataError, NumericalError) as exc:
        log.debug("local fit failed at seed %s: %s", seed, exc)
        return None, np.inf, part
    for _ in range(MAX_GROW_ROUNDS):
        cand = ndimage.binary_dilation(part, iterations=GROW_STEP) & inside
        if cand.sum() == part.sum():
            break
        active = np.argwhere(_active_set(grid, cand, 0.0, usable))
        try:
            sq_new, rms_new = fit_superquadric(grid, active, sq, config)
        except (InsufficientDataError, NumericalError):
            break
        if overreach(grid, sq_new) > MAX_OVERREACH:
            break
        fi = np.flatnonzero(cand)
        explained = np.zeros(grid.dims, dtype=bool)
        d = sq_signed_distance(sq_new, centers.reshape(-1, 3)[fi])
        explained.ravel()[fi[d < grid.spacing]] = True
        grown = _seed_component(explained, seed)
        if grown is None or grown.sum() <= (1.0 + MIN_GROWTH) * part.sum():
            if grown is not None and grown.sum() >= part.sum():
                sq, rms, part = sq_new, rms_new, grown
            break
        sq, rms, part = sq_new, rms_new, grown
    return sq, rms, part


def marching_primitives(grid, config=None):
    """Decompose the interior of ``grid`` into superquadrics."""
    t0 = time.perf_counter()
    config = (config or DecompositionConfig()).resolved(grid)
    values = grid.values
    interior = values < 0
    n_interior = int(interior.sum())
    if n_interior == 0:
        raise EmptyObjectError("grid has no interior voxels")
    centers = grid.centers().reshape(*grid.dims, 3)
    tol = config.residual_tolerance

    covered = np.zeros(grid.dims, dtype=bool)
    skipped = np.zeros(grid.dims, dtype=bool)
    assignment = np.full(grid.dims, -1, dtype=np.int64)
    primitives, residuals, history = [], [], []
    stall = 0

    while len(primitives) < config.max_primitives:
        free = interior & ~covered
        seeds = free & ~skipped
        if not seeds.any():
            break
        flat = np.flatnonzero(seeds)
        seed = np.unravel_index(flat[np.argmin(values.ravel()[flat])], grid.dims)
        region, level = grow_region(values, free, seed, grid.spacing)
        usable = free | (values >= 0)

        sq, rms = None, np.inf
        if region.sum() >= N_PARAMS:
            active = np.argwhere(_active_set(grid, region, level, usable))
            init = moment_init(centers[region], axis_bounds=config.axis_bounds)
            try:
                sq, rms = fit_superquadric(grid, active, init, config)
            except (InsufficientDataError, NumericalError) as exc:
                log.debug("fit failed at seed %s: %s", seed, exc)
                sq, rms = None, np.inf
            if sq is not None:
                log.debug("region fit at seed %s: surface residual %.3g, overreach %.3g",
                          seed, surface_residual(grid, active, sq), overreach(grid, sq))
            if (sq is None or surface_residual(grid, active, sq) > tol
                    or overreach(grid, sq) > MAX_OVERREACH):
                # one primitive cannot explain the whole basin: build a part
                # from the seed outward instead
                sq, rms, part = _grow_consistent(grid, seed, centers, config)
                if part is not None:
                    region = region | part

        newly = np.zeros(grid.dims, dtype=bool)
        if sq is not None:
            fi = np.flatnonzero(free)
            d = sq_signed_distance(sq, centers.reshape(-1, 3)[fi])
            newly.ravel()[fi[d < grid.spacing]] = True

        if sq is not None and newly.any() and rms < ACCEPT_FACTOR * tol:
            assignment[newly] = len(primitives)
            covered |= newly
            primitives.append(sq)
            residuals.append(rms)
            stall = 0
            log.info("primitive %d: axes=%s eps=%s rms=%.4g new=%d",
                     len(primitives) - 1, np.round(sq.axes, 4), np.round(sq.eps, 3), rms,
                     int(newly.sum()))
        else:
            skipped |= region
            skipped[seed] = True
            stall += 1
        history.append(covered.sum() / n_interior)
        if history[-1] >= config.interior_coverage_stop or stall >= NO_PROGRESS_ROUNDS:
            break

    if not primitives:
        raise InsufficientDataError("no superquadric could be fitted to the grid")
    primitives, residuals, coverage, assignment = prune_redundant(
        grid, primitives, residuals, config.prune_budget)
    return Decomposition(primitives, residuals, coverage, assignment, history,
                         1000.0 * (time.perf_counter() - t0))


def explained_voxels(grid, primitives):
    """Boolean (n_primitives, n_interior) table: interior voxel within one voxel of each primitive."""
    interior = grid.values < 0
    pts = grid.centers()[interior.ravel(order="C")]
    return np.array([sq_signed_distance(sq, pts) < grid.spacing for sq in primitives],
                    dtype=bool).reshape(len(primitives), -1)


def prune_redundant(grid, primitives, residuals, budget):
    """Greedily drop primitives whose unique contribution to coverage is small.

    Primitives fitted early around junctions often end up almost entirely
    inside later, larger parts. Each removal may cost at most half of
    ``budget`` in coverage and all removals together at most ``budget``.
    Returns ``(primitives, residuals, coverage, assignment)``.
    """
    interior = grid.values < 0
    n_interior = int(interior.sum())
    table = explained_voxels(grid, primitives)
    keep = list(range(len(primitives)))
    lost = 0
    while budget > 0 and len(keep) > 1:
        counts = table[keep].sum(axis=0)
        unique = [(int(np.count_nonzero(table[i] & (counts == 1))), i) for i in keep]
        u, i = min(unique)
        if u > 0.5 * budget * n_interior or lost + u > budget * n_interior:
            break
        keep.remove(i)
        lost += u
        log.info("pruned primitive %d (unique voxels %d)", i, u)
    table = table[keep]
    covered = table.any(axis=0)
    first = np.where(covered, np.argmax(table, axis=0), -1)
    assignment = np.full(grid.dims, -1, dtype=np.int64)
    assignment[interior] = first
    return ([primitives[i] for i in keep], [residuals[i] for i in keep],
            float(covered.sum() / n_interior), assignment)


# --------------------------------------------------------------------------- quality


def zero_level_points(grid):
    """Linear-interpolated sign changes along grid edges (the sampled surface)."""
    v = grid.values.astype(float)
    out = []
    for axis in range(3):
        a = [slice(None)] * 3
        b = [slice(None)] * 3
        a[axis] = slice(0, -1)
        b[axis] = slice(1, None)
        va, vb = v[tuple(a)], v[tuple(b)]
        cross = (va < 0) != (vb < 0)
        idx = np.argwhere(cross)
        t = va[cross] / (va[cross] - vb[cross])
        p = idx.astype(float)
        p[:, axis] += t
        out.append(grid.origin + grid.spacing * p)
    return np.vstack(out)


def coverage_report(decomposition, grid, n_eta=24, n_omega=48):
    """Return ``(coverage, hausdorff_out)``.

    Coverage counts interior voxels within one voxel of some primitive;
    ``hausdorff_out`` is the largest distance from a primitive surface sample
    to the grid's zero level.
    """
    if not decomposition.primitives:
        raise ValueError("empty decomposition")
    interior = grid.values < 0
    pts = grid.centers().reshape(*grid.dims, 3)[interior]
    inside_any = np.zeros(len(pts), dtype=bool)
    samples = []
    for sq in decomposition.primitives:
        inside_any |= sq_signed_distance(sq, pts) < grid.spacing
        samples.append(sample_surface_grid(sq, n_eta, n_omega))
    coverage = float(inside_any.sum() / max(len(pts), 1))
    zl = zero_level_points(grid)
    if len(zl) == 0:
        return coverage, float("inf")
    d, _ = cKDTree(zl).query(np.vstack(samples))
    return coverage, float(d.max())


def report_json(decomposition, grid):
    coverage, haus = coverage_report(decomposition, grid)
    return json.dumps({
        "coverage": coverage,
        "hausdorff_out": haus,
        "residuals": [float(r) for r in decomposition.per_primitive_residual],
        "runtime_ms": float(decomposition.runtime_ms),
    }, indent=2)

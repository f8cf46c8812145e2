"""Truncated signed distance grids sampled from a mesh."""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, MeshFormatError, OutOfDomainError
from .geometry.mesh import unsigned_distance, winding_number

MAGIC = b"SQSDF1"
RESOLUTION_RANGE = (16, 512)
DEFAULT_RESOLUTION = 100
DEFAULT_TRUNCATION_FACTOR = 10.0
MARGIN_VOXELS = 3
_HEADER = struct.Struct("<6s3i5d")


@dataclass(frozen=True, eq=False)
class SdfGrid:
    """Voxel-center samples of a truncated signed distance (meters).

    ``values[i, j, k]`` is the sample at ``origin + spacing * (i, j, k)``.
    """

    origin: np.ndarray
    spacing: float
    values: np.ndarray
    truncation: float

    def __post_init__(self):
        o = np.array(self.origin, dtype=float).reshape(3)
        v = np.array(self.values, dtype=np.float32)
        if v.ndim != 3 or min(v.shape) < 2:
            raise ValueError("grid needs at least 2 samples along each axis")
        if not self.spacing > 0:
            raise ValueError("spacing must be positive")
        if np.abs(v).max(initial=0.0) > self.truncation:
            raise ValueError("grid values exceed the truncation distance")
        o.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "spacing", float(self.spacing))
        object.__setattr__(self, "truncation", float(self.truncation))

    @property
    def dims(self):
        return tuple(int(n) for n in self.values.shape)

    @property
    def upper(self):
        return self.origin + self.spacing * (np.array(self.dims) - 1)

    def centers(self, index=None):
        """World coordinates of voxel centers; all of them, or those at integer ``index`` (N, 3)."""
        if index is None:
            ii = np.indices(self.dims).reshape(3, -1).T
        else:
            ii = np.asarray(index)
        return self.origin + self.spacing * ii

    def interior_mask(self):
        return self.values < 0

    def __eq__(self, other):
        if not isinstance(other, SdfGrid):
            return NotImplemented
        return (np.array_equal(self.origin, other.origin) and self.spacing == other.spacing
                and self.truncation == other.truncation
                and np.array_equal(self.values, other.values))

    __hash__ = None


def _float32_within(limit):
    hi = np.float32(limit)
    if hi > limit:
        hi = np.nextafter(hi, np.float32(0))
    return hi


def build_sdf(mesh, target_resolution=DEFAULT_RESOLUTION,
              truncation_factor=DEFAULT_TRUNCATION_FACTOR, margin=MARGIN_VOXELS):
    """Sample ``clamp(signed_distance(mesh, c), -delta, delta)`` at every voxel center.

    The voxel pitch is the longest bounding-box side divided by
    ``target_resolution``; the grid extends ``margin`` voxels past the box.
    """
    lo_r, hi_r = RESOLUTION_RANGE
    if not (lo_r <= target_resolution <= hi_r) or int(target_resolution) != target_resolution:
        raise ConfigurationError(
            f"target_resolution must be an integer in [{lo_r}, {hi_r}], got {target_resolution}")
    if not truncation_factor > 0:
        raise ConfigurationError("truncation_factor must be positive")
    if margin < 2:
        raise ConfigurationError("margin must be at least 2 voxels")
    lo, hi = mesh.bounds
    spacing = float((hi - lo).max()) / int(target_resolution)
    delta = truncation_factor * spacing
    origin = lo - margin * spacing
    dims = np.ceil((hi - lo) / spacing - 1e-9).astype(int) + 1 + 2 * margin
    grid = SdfGrid(origin, spacing, np.zeros(dims, dtype=np.float32), delta)
    pts = grid.centers()
    d = unsigned_distance(mesh, pts, max_distance=delta)
    inside = winding_number(mesh, pts) >= 0.5
    vals = np.where(inside, -d, d)
    limit = _float32_within(delta)
    vals = np.clip(vals.astype(np.float32), -limit, limit).reshape(dims)
    return SdfGrid(origin, spacing, vals, delta)


def query_trilinear(grid, points):
    """Trilinear interpolation of the voxel samples.

    Raises :class:`OutOfDomainError` if any point lies outside the sampled
    box; the error carries the value interpolated at the clamped position.
    """
    p = np.asarray(points, dtype=float)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    u = (p - grid.origin) / grid.spacing
    n = np.array(grid.dims) - 1
    outside = np.any((u < -1e-9) | (u > n + 1e-9), axis=1)
    uc = np.clip(u, 0, n)
    vals = _interp(grid.values, uc)
    if outside.any():
        clamped = float(vals[0]) if single else vals
        raise OutOfDomainError("query point outside the grid bounds", clamped)
    return float(vals[0]) if single else vals


def sample_clamped(grid, points):
    """Trilinear values at ``points`` plus a mask of which points lie inside the grid box."""
    p = np.atleast_2d(np.asarray(points, dtype=float))
    u = (p - grid.origin) / grid.spacing
    n = np.array(grid.dims) - 1
    inside = np.all((u >= -1e-9) & (u <= n + 1e-9), axis=1)
    return _interp(grid.values, np.clip(u, 0, n)), inside


def _interp(values, u):
    n = np.array(values.shape) - 1
    i0 = np.minimum(np.floor(u).astype(int), n - 1)
    t = u - i0
    v = values.astype(np.float64)
    out = np.zeros(len(u))
    for dx in (0, 1):
        wx = t[:, 0] if dx else 1 - t[:, 0]
        for dy in (0, 1):
            wy = t[:, 1] if dy else 1 - t[:, 1]
            for dz in (0, 1):
                wz = t[:, 2] if dz else 1 - t[:, 2]
                out += wx * wy * wz * v[i0[:, 0] + dx, i0[:, 1] + dy, i0[:, 2] + dz]
    return out


def dump_grid(grid, target):
    """Binary layout: magic, dims (int32), origin, spacing, truncation (float64), float32 values x-fastest."""
    header = _HEADER.pack(MAGIC, *grid.dims, *grid.origin, grid.spacing, grid.truncation)
    payload = header + grid.values.ravel(order="F").astype("<f4").tobytes()
    if isinstance(target, (str, os.PathLike)):
        Path(target).write_bytes(payload)
    else:
        target.write(payload)


def load_grid(source):
    data = Path(source).read_bytes() if isinstance(source, (str, os.PathLike)) else source.read()
    if len(data) < _HEADER.size or data[:6] != MAGIC:
        raise MeshFormatError("not an SQSDF1 grid file", "offset 0")
    magic, nx, ny, nz, ox, oy, oz, spacing, trunc = _HEADER.unpack_from(data, 0)
    count = nx * ny * nz
    if len(data) != _HEADER.size + 4 * count:
        raise MeshFormatError(f"grid payload size mismatch for dims {(nx, ny, nz)}", f"offset {_HEADER.size}")
    vals = np.frombuffer(data, dtype="<f4", count=count, offset=_HEADER.size)
    return SdfGrid((ox, oy, oz), spacing, vals.reshape((nx, ny, nz), order="F"), trunc)

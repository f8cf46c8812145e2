"""Triangle meshes: container, readers/writers, distance and sampling queries."""

from __future__ import annotations

import io
import os
import struct
import threading
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from ..errors import EmptyInputError, MeshFormatError
from .bvh import BVH

MERGE_TOL = 1e-9
MIN_AREA = 1e-12
NORMAL_TOL = 1e-6
FORMATS = ("obj", "ply", "stl")


class TriangleMesh:
    """Immutable indexed triangle mesh (meters).

    Construction validates the invariants but does not clean; use
    :func:`clean_mesh` or :func:`load_mesh` for raw data.
    """

    def __init__(self, vertices, triangles, vertex_normals=None):
        v = np.array(vertices, dtype=np.float64).reshape(-1, 3)
        f = np.array(triangles, dtype=np.int64).reshape(-1, 3)
        if len(v) == 0 or len(f) == 0:
            raise EmptyInputError("mesh has no vertices or no triangles")
        if not np.all(np.isfinite(v)):
            raise ValueError("vertex coordinates must be finite")
        if f.min() < 0 or f.max() >= len(v):
            raise ValueError("triangle index out of range")
        areas = _triangle_areas(v, f)
        if areas.min() < MIN_AREA:
            raise ValueError("mesh contains degenerate triangles; clean it first")
        if vertex_normals is not None:
            n = np.array(vertex_normals, dtype=np.float64).reshape(-1, 3)
            if len(n) != len(v):
                raise ValueError("one normal per vertex required")
            if np.abs(np.linalg.norm(n, axis=1) - 1.0).max() > NORMAL_TOL:
                raise ValueError("vertex normals must be unit length")
            n.flags.writeable = False
        else:
            n = None
        for arr in (v, f, areas):
            arr.flags.writeable = False
        self.vertices = v
        self.triangles = f
        self.vertex_normals = n
        self.face_areas = areas
        self._bvh = None
        self._lock = threading.Lock()

    def __repr__(self):
        return (f"TriangleMesh(n_vertices={len(self.vertices)}, "
                f"n_triangles={len(self.triangles)}, watertight={self.watertight})")

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def face_normals(self):
        v, f = self.vertices, self.triangles
        c = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
        return c / np.linalg.norm(c, axis=1, keepdims=True)

    @property
    def bounds(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    @property
    def watertight(self):
        """True when every undirected edge is shared by exactly two triangles."""
        f = self.triangles
        edges = np.sort(np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]]), axis=1)
        _, counts = np.unique(edges, axis=0, return_counts=True)
        return bool(np.all(counts == 2))

    @property
    def bvh(self):
        if self._bvh is None:
            with self._lock:
                if self._bvh is None:
                    self._bvh = BVH(self.vertices, self.triangles)
        return self._bvh

    def with_vertex_normals(self):
        """Copy of this mesh carrying area-weighted vertex normals."""
        v, f = self.vertices, self.triangles
        c = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
        acc = np.zeros_like(v)
        for k in range(3):
            np.add.at(acc, f[:, k], c)
        norm = np.linalg.norm(acc, axis=1, keepdims=True)
        norm[norm == 0] = 1.0
        acc = acc / norm
        acc[np.linalg.norm(acc, axis=1) == 0] = (0.0, 0.0, 1.0)
        return TriangleMesh(v, f, acc)

    def transformed(self, pose=None, scale=1.0):
        v = self.vertices * scale
        if pose is not None:
            v = pose.apply(v)
        return TriangleMesh(v, self.triangles)


def _triangle_areas(v, f):
    return 0.5 * np.linalg.norm(np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]]), axis=1)


def clean_mesh(vertices, triangles, tol=MERGE_TOL, min_area=MIN_AREA):
    """Merge vertices closer than ``tol``, drop degenerate and unreferenced data."""
    v = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    f = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    if len(v) == 0 or len(f) == 0:
        raise EmptyInputError("mesh has no vertices or no triangles")
    if not np.all(np.isfinite(v)):
        raise MeshFormatError("non-finite vertex coordinate")
    if f.min() < 0 or f.max() >= len(v):
        raise MeshFormatError("triangle index out of range")

    pairs = cKDTree(v).query_pairs(tol, output_type="ndarray")
    if len(pairs):
        g = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(len(v), len(v)))
        _, labels = connected_components(g, directed=False)
        # representative = lowest original index in each cluster
        rep = np.full(labels.max() + 1, len(v))
        np.minimum.at(rep, labels, np.arange(len(v)))
        f = rep[labels][f]

    keep = (f[:, 0] != f[:, 1]) & (f[:, 1] != f[:, 2]) & (f[:, 2] != f[:, 0])
    f = f[keep]
    if len(f):
        f = f[_triangle_areas(v, f) >= min_area]
    if len(f) == 0:
        raise EmptyInputError("no non-degenerate triangles remain after cleaning")

    used = np.unique(f)
    remap = np.full(len(v), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return TriangleMesh(v[used], remap[f])


# --------------------------------------------------------------------------- readers


def load_mesh(source, format=None, scale=1.0):
    """Read an OBJ, PLY (ASCII or binary) or STL (ASCII or binary) mesh.

    ``source`` may be raw bytes, a binary file object or a path. The format
    is taken from the file suffix when not given. Coordinates are multiplied
    by ``scale``; the result is cleaned (see :func:`clean_mesh`).
    """
    if isinstance(source, (str, os.PathLike)):
        path = Path(source)
        if format is None:
            format = path.suffix.lstrip(".")
        data = path.read_bytes()
    elif isinstance(source, (bytes, bytearray, memoryview)):
        data = bytes(source)
    else:
        data = source.read()
    if format is None:
        raise ValueError("mesh format must be given for non-path sources")
    fmt = format.lower().lstrip(".")
    if fmt not in FORMATS:
        raise MeshFormatError(f"unsupported mesh format {format!r}")
    if len(data) == 0:
        raise EmptyInputError("empty mesh stream")
    reader = {"obj": _read_obj, "ply": _read_ply, "stl": _read_stl}[fmt]
    vertices, triangles = reader(data)
    if len(vertices) == 0 or len(triangles) == 0:
        raise EmptyInputError("mesh stream contains no triangles")
    return clean_mesh(np.asarray(vertices, dtype=np.float64) * scale, triangles)


def _read_obj(data):
    vertices = []
    triangles = []
    text = data.decode("utf-8", errors="replace")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        tag = parts[0]
        if tag == "v":
            try:
                vertices.append([float(x) for x in parts[1:4]])
            except ValueError:
                raise MeshFormatError(f"malformed vertex line {raw!r}", f"line {lineno}") from None
            if len(parts) < 4:
                raise MeshFormatError(f"vertex line needs 3 coordinates: {raw!r}", f"line {lineno}")
        elif tag == "f":
            if len(parts) < 4:
                raise MeshFormatError(f"face line needs at least 3 vertices: {raw!r}", f"line {lineno}")
            idx = []
            for tok in parts[1:]:
                try:
                    i = int(tok.split("/")[0])
                except ValueError:
                    raise MeshFormatError(f"malformed face line {raw!r}", f"line {lineno}") from None
                if i == 0:
                    raise MeshFormatError(f"face index 0 is invalid: {raw!r}", f"line {lineno}")
                i = i - 1 if i > 0 else len(vertices) + i
                if not 0 <= i < len(vertices):
                    raise MeshFormatError(f"face index out of range: {raw!r}", f"line {lineno}")
                idx.append(i)
            for k in range(1, len(idx) - 1):
                triangles.append([idx[0], idx[k], idx[k + 1]])
    return np.asarray(vertices, dtype=np.float64).reshape(-1, 3), np.asarray(triangles, dtype=np.int64).reshape(-1, 3)


_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _read_ply(data):
    if not data.startswith(b"ply"):
        raise MeshFormatError("missing 'ply' magic", "offset 0")
    end = data.find(b"end_header")
    if end < 0:
        raise MeshFormatError("missing end_header")
    nl = data.find(b"\n", end)
    body_start = nl + 1 if nl >= 0 else len(data)
    header = data[:end].decode("ascii", errors="replace").splitlines()

    fmt = None
    elements = []  # (name, count, [(name, type) or (name, ('list', count_t, item_t))])
    for lineno, line in enumerate(header, start=1):
        parts = line.split()
        if not parts or parts[0] in ("ply", "comment", "obj_info"):
            continue
        try:
            if parts[0] == "format":
                fmt = parts[1]
            elif parts[0] == "element":
                elements.append((parts[1], int(parts[2]), []))
            elif parts[0] == "property":
                if parts[1] == "list":
                    elements[-1][2].append((parts[4], ("list", _PLY_TYPES[parts[2]], _PLY_TYPES[parts[3]])))
                else:
                    elements[-1][2].append((parts[2], _PLY_TYPES[parts[1]]))
            else:
                raise MeshFormatError(f"unknown header keyword {parts[0]!r}", f"line {lineno}")
        except (IndexError, KeyError, ValueError):
            raise MeshFormatError(f"malformed header line {line!r}", f"line {lineno}") from None
    if fmt not in ("ascii", "binary_little_endian", "binary_big_endian"):
        raise MeshFormatError(f"unsupported PLY format {fmt!r}")

    if fmt == "ascii":
        return _read_ply_ascii(data[body_start:], elements, header_lines=len(header) + 1)
    endian = "<" if fmt == "binary_little_endian" else ">"
    return _read_ply_binary(data, body_start, elements, endian)


def _ply_collect(name, props, rows, vertices, faces):
    if name == "vertex":
        names = [p[0] for p in props]
        try:
            ix = [names.index(c) for c in ("x", "y", "z")]
        except ValueError:
            raise MeshFormatError("vertex element lacks x/y/z") from None
        vertices.extend([[r[i] for i in ix] for r in rows])
    elif name == "face":
        for r in rows:
            idx = r[0]
            for k in range(1, len(idx) - 1):
                faces.append([idx[0], idx[k], idx[k + 1]])


def _read_ply_ascii(body, elements, header_lines):
    lines = body.decode("ascii", errors="replace").splitlines()
    pos = 0
    vertices, faces = [], []
    for name, count, props in elements:
        rows = []
        for _ in range(count):
            while pos < len(lines) and not lines[pos].strip():
                pos += 1
            if pos >= len(lines):
                raise MeshFormatError(f"unexpected end of data in element {name!r}",
                                      f"line {header_lines + pos + 1}")
            toks = lines[pos].split()
            lineno = header_lines + pos + 1
            pos += 1
            row = []
            k = 0
            try:
                for _pname, ptype in props:
                    if isinstance(ptype, tuple):
                        n = int(toks[k])
                        row.append([int(t) for t in toks[k + 1:k + 1 + n]])
                        if len(row[-1]) != n:
                            raise IndexError
                        k += 1 + n
                    else:
                        row.append(float(toks[k]))
                        k += 1
            except (IndexError, ValueError):
                raise MeshFormatError(f"malformed {name} line {lines[pos - 1]!r}", f"line {lineno}") from None
            rows.append(row)
        _ply_collect(name, props, rows, vertices, faces)
    return np.asarray(vertices, dtype=np.float64).reshape(-1, 3), np.asarray(faces, dtype=np.int64).reshape(-1, 3)


def _read_ply_binary(data, offset, elements, endian):
    vertices, faces = [], []
    for name, count, props in elements:
        if not any(isinstance(p[1], tuple) for p in props):
            dt = np.dtype([(pn, endian + pt) for pn, pt in props])
            need = dt.itemsize * count
            if offset + need > len(data):
                raise MeshFormatError(f"truncated element {name!r}", f"offset {offset}")
            arr = np.frombuffer(data, dtype=dt, count=count, offset=offset)
            offset += need
            if name == "vertex":
                try:
                    vertices.extend(np.column_stack([arr["x"], arr["y"], arr["z"]]).astype(float).tolist())
                except ValueError:
                    raise MeshFormatError("vertex element lacks x/y/z") from None
            continue
        rows = []
        for _ in range(count):
            row = []
            for _pname, ptype in props:
                try:
                    if isinstance(ptype, tuple):
                        ct = np.dtype(endian + ptype[1])
                        it = np.dtype(endian + ptype[2])
                        n = int(np.frombuffer(data, ct, 1, offset)[0])
                        offset += ct.itemsize
                        row.append(np.frombuffer(data, it, n, offset).astype(np.int64).tolist())
                        offset += it.itemsize * n
                    else:
                        t = np.dtype(endian + ptype)
                        row.append(float(np.frombuffer(data, t, 1, offset)[0]))
                        offset += t.itemsize
                except ValueError:
                    raise MeshFormatError(f"truncated element {name!r}", f"offset {offset}") from None
            rows.append(row)
        _ply_collect(name, props, rows, vertices, faces)
    return np.asarray(vertices, dtype=np.float64).reshape(-1, 3), np.asarray(faces, dtype=np.int64).reshape(-1, 3)


def _read_stl(data):
    head = data[:512].lstrip().lower()
    if head.startswith(b"solid") and b"facet" in data[:4096].lower():
        return _read_stl_ascii(data)
    return _read_stl_binary(data)


def _read_stl_ascii(data):
    verts = []
    for lineno, raw in enumerate(data.decode("ascii", errors="replace").splitlines(), start=1):
        parts = raw.split()
        if parts and parts[0] == "vertex":
            try:
                verts.append([float(x) for x in parts[1:4]])
            except ValueError:
                raise MeshFormatError(f"malformed vertex line {raw!r}", f"line {lineno}") from None
            if len(parts) != 4:
                raise MeshFormatError(f"malformed vertex line {raw!r}", f"line {lineno}")
    if len(verts) % 3:
        raise MeshFormatError("vertex count is not a multiple of 3")
    v = np.asarray(verts, dtype=np.float64).reshape(-1, 3)
    return v, np.arange(len(v)).reshape(-1, 3)


def _read_stl_binary(data):
    if len(data) < 84:
        raise MeshFormatError("binary STL shorter than its header", f"offset {len(data)}")
    (n,) = struct.unpack_from("<I", data, 80)
    if len(data) < 84 + 50 * n:
        raise MeshFormatError(f"binary STL declares {n} facets but is truncated", f"offset {len(data)}")
    dt = np.dtype([("normal", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")])
    rec = np.frombuffer(data, dtype=dt, count=n, offset=84)
    v = rec["v"].reshape(-1, 3).astype(np.float64)
    return v, np.arange(len(v)).reshape(-1, 3)


# --------------------------------------------------------------------------- writers


def write_obj(mesh, target):
    """Write ``mesh`` as OBJ to a path or text stream (debug dumps)."""
    buf = io.StringIO()
    for x, y, z in mesh.vertices.tolist():
        buf.write(f"v {x!r} {y!r} {z!r}\n")
    for a, b, c in (mesh.triangles + 1).tolist():
        buf.write(f"f {a} {b} {c}\n")
    if isinstance(target, (str, os.PathLike)):
        Path(target).write_text(buf.getvalue())
    else:
        target.write(buf.getvalue())


def write_stl(mesh, target):
    """Binary STL writer; used to exercise the reader in tests."""
    tri = mesh.vertices[mesh.triangles].astype("<f4")
    n = mesh.face_normals.astype("<f4")
    out = bytearray(b"\0" * 80)
    out += struct.pack("<I", len(tri))
    for k in range(len(tri)):
        out += n[k].tobytes() + tri[k].tobytes() + b"\0\0"
    Path(target).write_bytes(bytes(out))


def write_ply(mesh, target, binary=True):
    v, f = mesh.vertices, mesh.triangles
    fmt = "binary_little_endian" if binary else "ascii"
    header = (f"ply\nformat {fmt} 1.0\nelement vertex {len(v)}\n"
              "property double x\nproperty double y\nproperty double z\n"
              f"element face {len(f)}\nproperty list uchar int vertex_indices\nend_header\n")
    if binary:
        body = v.astype("<f8").tobytes()
        rec = np.zeros(len(f), dtype=[("n", "u1"), ("i", "<i4", 3)])
        rec["n"] = 3
        rec["i"] = f
        body += rec.tobytes()
        Path(target).write_bytes(header.encode() + body)
    else:
        lines = ([f"{x!r} {y!r} {z!r}" for x, y, z in v.tolist()]
                 + [f"3 {a} {b} {c}" for a, b, c in f.tolist()])
        Path(target).write_text(header + "\n".join(lines) + "\n")


# --------------------------------------------------------------------------- queries


def unsigned_distance(mesh, points, max_distance=np.inf):
    d, _, _ = mesh.bvh.closest(points, max_distance)
    return d


def winding_number(mesh, points, beta=2.0):
    return mesh.bvh.winding_number(points, beta)


def signed_distance(mesh, points):
    """Distance to the triangle soup, negative where the winding number is >= 0.5.

    Accepts a single point (returns a float) or an (N, 3) array.
    """
    p = np.asarray(points, dtype=np.float64)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    d = unsigned_distance(mesh, p)
    inside = winding_number(mesh, p) >= 0.5
    sd = np.where(inside, -d, d)
    return float(sd[0]) if single else sd


def min_signed_distance(mesh, points):
    """Exact ``min(signed_distance(mesh, points))`` and the index attaining it.

    Outside points only need a single shrinking-cap scan; if any point is
    inside, the minimum is the deepest inside point.
    """
    p = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
    if len(p) == 0:
        raise ValueError("no query points")
    inside = winding_number(mesh, p) >= 0.5
    if inside.any():
        idx = np.flatnonzero(inside)
        d = unsigned_distance(mesh, p[idx])
        k = int(np.argmax(d))
        return -float(d[k]), int(idx[k])
    d, k = mesh.bvh.min_distance(p)
    return float(d), k


def sample_surface(mesh, n, seed):
    """Area-weighted surface samples with their triangles' outward normals."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    areas = mesh.face_areas
    tri = rng.choice(len(areas), size=n, p=areas / areas.sum())
    r1, r2 = rng.random((2, n))
    s = np.sqrt(r1)
    u, v, w = 1.0 - s, s * (1.0 - r2), s * r2
    corners = mesh.vertices[mesh.triangles[tri]]
    pts = u[:, None] * corners[:, 0] + v[:, None] * corners[:, 1] + w[:, None] * corners[:, 2]
    return pts, mesh.face_normals[tri]

"""Procedural meshes used as the synthetic object corpus.

Simple solids (box, icosphere) are built exactly. Composite objects are
described as a union of analytic signed distance functions and meshed with
marching cubes, which gives a watertight surface without internal faces.
"""

import numpy as np

from .mesh import TriangleMesh, clean_mesh


def box(extents, center=(0.0, 0.0, 0.0)):
    """Axis-aligned box with full side lengths ``extents``; 8 vertices, 12 triangles."""
    h = 0.5 * np.asarray(extents, dtype=float)
    c = np.asarray(center, dtype=float)
    signs = np.array([[-1, -1, -1], [1, -1, -1], [1, 1, -1], [-1, 1, -1],
                      [-1, -1, 1], [1, -1, 1], [1, 1, 1], [-1, 1, 1]], dtype=float)
    faces = np.array([[0, 2, 1], [0, 3, 2],   # -z
                      [4, 5, 6], [4, 6, 7],   # +z
                      [0, 1, 5], [0, 5, 4],   # -y
                      [2, 3, 7], [2, 7, 6],   # +y
                      [1, 2, 6], [1, 6, 5],   # +x
                      [0, 4, 7], [0, 7, 3]])  # -x
    return TriangleMesh(c + signs * h, faces)


def icosphere(radius=1.0, subdivisions=3, center=(0.0, 0.0, 0.0)):
    t = (1.0 + 5.0 ** 0.5) / 2.0
    v = np.array([[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
                  [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
                  [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]], dtype=float)
    f = np.array([[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
                  [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
                  [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
                  [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]])
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    for _ in range(subdivisions):
        cache = {}
        verts = list(v)

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new_f = []
        for a, b, c in f:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_f += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        v = np.array(verts)
        f = np.array(new_f)
    return TriangleMesh(v * radius + np.asarray(center, dtype=float), f)


def concatenate(*meshes):
    """Disjoint union of meshes (no boolean merge)."""
    verts, faces, off = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.triangles + off)
        off += len(m.vertices)
    return TriangleMesh(np.vstack(verts), np.vstack(faces))


# --------------------------------------------------------------------------- implicit solids


def sdf_sphere(center, radius):
    c = np.asarray(center, dtype=float)
    return lambda p: np.linalg.norm(p - c, axis=-1) - radius


def sdf_box(center, extents):
    c = np.asarray(center, dtype=float)
    h = 0.5 * np.asarray(extents, dtype=float)

    def f(p):
        q = np.abs(p - c) - h
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(q.max(axis=-1), 0.0)
        return outside + inside
    return f


def sdf_capsule(a, b, radius):
    """Segment a-b swept by a ball."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ab = b - a

    def f(p):
        t = np.clip(((p - a) @ ab) / (ab @ ab), 0.0, 1.0)
        return np.linalg.norm(p - (a + t[..., None] * ab), axis=-1) - radius
    return f


def sdf_cylinder(a, b, radius):
    """Flat-capped cylinder along segment a-b."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    axis = b - a
    length = np.linalg.norm(axis)
    axis = axis / length
    mid = 0.5 * (a + b)

    def f(p):
        d = p - mid
        along = d @ axis
        radial = np.linalg.norm(d - along[..., None] * axis, axis=-1)
        q = np.stack([radial - radius, np.abs(along) - 0.5 * length], axis=-1)
        return np.linalg.norm(np.maximum(q, 0.0), axis=-1) + np.minimum(q.max(axis=-1), 0.0)
    return f


def mesh_implicit(sdf_funcs, lo, hi, pitch):
    """Marching-cubes mesh of the union (pointwise min) of ``sdf_funcs``."""
    from skimage.measure import marching_cubes

    # off-lattice origin keeps flat faces from landing on grid planes, which
    # yields zero-area slivers that cleaning would turn into holes
    lo = np.asarray(lo, dtype=float) - 2.37 * pitch
    hi = np.asarray(hi, dtype=float) + 2 * pitch
    n = np.ceil((hi - lo) / pitch).astype(int) + 1
    axes = [lo[k] + pitch * np.arange(n[k]) for k in range(3)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    vals = np.min([f(grid) for f in sdf_funcs], axis=0)
    verts, faces, _, _ = marching_cubes(vals, level=0.0, spacing=(pitch, pitch, pitch))
    verts = verts + lo
    mesh = clean_mesh(verts, faces)
    if _signed_volume(mesh) < 0:
        mesh = TriangleMesh(mesh.vertices, mesh.triangles[:, ::-1])
    return mesh


def _signed_volume(mesh):
    t = mesh.vertices[mesh.triangles]
    return np.einsum("ij,ij->i", t[:, 0], np.cross(t[:, 1], t[:, 2])).sum() / 6.0


# --------------------------------------------------------------------------- corpus


def sphere_object(radius=0.25, subdivisions=4):
    return icosphere(radius, subdivisions)


def box_object(extents=(0.6, 0.3, 0.2)):
    return box(extents)


def twin_spheres(radius=0.3, separation=1.0, subdivisions=4):
    return concatenate(icosphere(radius, subdivisions, (-separation / 2, 0.0, 0.0)),
                       icosphere(radius, subdivisions, (separation / 2, 0.0, 0.0)))


def dumbbell(radius=0.3, separation=1.0, bridge_radius=0.06, pitch=0.02):
    s = separation / 2
    funcs = [sdf_sphere((-s, 0, 0), radius), sdf_sphere((s, 0, 0), radius),
             sdf_cylinder((-s, 0, 0), (s, 0, 0), bridge_radius)]
    return mesh_implicit(funcs, (-s - radius, -radius, -radius), (s + radius, radius, radius), pitch)


def chair(seat=(0.45, 0.45, 0.05), leg=0.05, leg_height=0.42, back_height=0.45,
          back_thickness=0.05, pitch=0.0125):
    """Four legs, a seat slab and a backrest; origin at the floor center."""
    sx, sy, st = seat
    z_seat = leg_height + st / 2
    funcs = [sdf_box((0, 0, z_seat), seat)]
    for ix in (-1, 1):
        for iy in (-1, 1):
            c = (ix * (sx / 2 - leg / 2), iy * (sy / 2 - leg / 2), leg_height / 2)
            funcs.append(sdf_box(c, (leg, leg, leg_height)))
    zb = leg_height + st + back_height / 2
    funcs.append(sdf_box((0, sy / 2 - back_thickness / 2, zb), (sx, back_thickness, back_height)))
    top = leg_height + st + back_height
    return mesh_implicit(funcs, (-sx / 2, -sy / 2, 0.0), (sx / 2, sy / 2, top), pitch)


CORPUS = {
    "sphere": sphere_object,
    "box": box_object,
    "twin_spheres": twin_spheres,
    "dumbbell": dumbbell,
    "chair": chair,
}

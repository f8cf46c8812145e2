"""Axis-aligned BVH over a triangle soup.

Closest-point queries are exact. Inside/outside uses the generalized winding
number, evaluated hierarchically: triangles in a node that is far from the
query (relative to the node's radius) are replaced by their area-weighted
normal dipole, nearby nodes are opened down to exact per-triangle solid
angles.
"""

import math

import numpy as np
from numba import njit, prange

LEAF_SIZE = 4
STACK_SIZE = 128
FOUR_PI = 4.0 * math.pi


class BVH:
    """Flattened BVH; immutable after construction."""

    def __init__(self, vertices, triangles, leaf_size=LEAF_SIZE):
        v = np.ascontiguousarray(vertices, dtype=np.float64)
        f = np.ascontiguousarray(triangles, dtype=np.int64)
        self.tri_points = np.ascontiguousarray(v[f])  # (T, 3, 3)
        (self.node_lo, self.node_hi, self.node_left, self.node_right,
         self.node_start, self.node_count, self.order) = _build(self.tri_points, leaf_size)
        # reorder triangles so each leaf is a contiguous slice
        self.tri_points = np.ascontiguousarray(self.tri_points[self.order])
        (self.node_normal, self.node_center,
         self.node_radius) = _dipoles(self.tri_points, self.node_left, self.node_right,
                                      self.node_start, self.node_count,
                                      self.node_lo, self.node_hi)
        for arr in (self.tri_points, self.node_lo, self.node_hi, self.node_left,
                    self.node_right, self.node_start, self.node_count, self.order,
                    self.node_normal, self.node_center, self.node_radius):
            arr.flags.writeable = False

    @property
    def n_nodes(self):
        return len(self.node_left)

    def closest(self, points, max_distance=np.inf):
        """Closest triangle point for each query.

        Returns ``(distance, closest_point, triangle_index)``. With a finite
        ``max_distance`` the search is capped: queries with nothing closer get
        ``distance = max_distance`` and triangle index -1.
        """
        p = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
        cap2 = np.inf if not np.isfinite(max_distance) else float(max_distance) ** 2
        dist = np.empty(len(p))
        cp = np.empty((len(p), 3))
        tri = np.empty(len(p), dtype=np.int64)
        _closest_batch(p, cap2, self.tri_points, self.node_lo, self.node_hi,
                       self.node_left, self.node_right, self.node_start,
                       self.node_count, dist, cp, tri)
        found = tri >= 0
        tri[found] = self.order[tri[found]]
        return dist, cp, tri

    def min_distance(self, points):
        """Smallest point-to-surface distance over ``points`` and the index attaining it.

        Each query is capped by the best distance found so far, so this is
        much cheaper than a full batch query followed by ``min``.
        """
        p = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
        if len(p) == 0:
            return np.inf, -1
        d2, idx = _min_distance_scan(p, self.tri_points, self.node_lo, self.node_hi,
                                     self.node_left, self.node_right, self.node_start,
                                     self.node_count)
        return math.sqrt(d2), int(idx)

    def winding_number(self, points, beta=2.0):
        p = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
        out = np.empty(len(p))
        _winding_batch(p, beta, self.tri_points, self.node_left, self.node_right,
                       self.node_start, self.node_count, self.node_normal,
                       self.node_center, self.node_radius, out)
        return out


def _build(tri_points, leaf_size):
    n = len(tri_points)
    centroids = tri_points.mean(axis=1)
    tmin = tri_points.min(axis=1)
    tmax = tri_points.max(axis=1)
    order = np.arange(n)
    max_nodes = max(1, 2 * n)
    lo = np.empty((max_nodes, 3))
    hi = np.empty((max_nodes, 3))
    left = np.full(max_nodes, -1, dtype=np.int64)
    right = np.full(max_nodes, -1, dtype=np.int64)
    start = np.zeros(max_nodes, dtype=np.int64)
    count = np.zeros(max_nodes, dtype=np.int64)

    n_nodes = 1
    stack = [(0, 0, n)]
    while stack:
        node, s, e = stack.pop()
        idx = order[s:e]
        lo[node] = tmin[idx].min(axis=0)
        hi[node] = tmax[idx].max(axis=0)
        if e - s <= leaf_size:
            start[node], count[node] = s, e - s
            continue
        c = centroids[idx]
        axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
        mid = (e - s) // 2
        part = np.argpartition(c[:, axis], mid, kind="introselect")
        order[s:e] = idx[part]
        l, r = n_nodes, n_nodes + 1
        n_nodes += 2
        left[node], right[node] = l, r
        stack.append((r, s + mid, e))
        stack.append((l, s, s + mid))

    return (lo[:n_nodes].copy(), hi[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), start[:n_nodes].copy(), count[:n_nodes].copy(), order)


def _dipoles(tri_points, left, right, start, count, lo, hi):
    n_nodes = len(left)
    a = tri_points[:, 0]
    e1 = tri_points[:, 1] - a
    e2 = tri_points[:, 2] - a
    half_cross = 0.5 * np.cross(e1, e2)
    area = np.linalg.norm(half_cross, axis=1)
    cent = tri_points.mean(axis=1)
    normal = np.zeros((n_nodes, 3))
    center = np.zeros((n_nodes, 3))
    radius = np.zeros(n_nodes)
    # leaves and internal nodes both span a contiguous triangle range
    span_start = np.empty(n_nodes, dtype=np.int64)
    span_end = np.empty(n_nodes, dtype=np.int64)
    for node in range(n_nodes - 1, -1, -1):
        if left[node] < 0:
            span_start[node] = start[node]
            span_end[node] = start[node] + count[node]
        else:
            span_start[node] = min(span_start[left[node]], span_start[right[node]])
            span_end[node] = max(span_end[left[node]], span_end[right[node]])
    for node in range(n_nodes):
        s, e = span_start[node], span_end[node]
        normal[node] = half_cross[s:e].sum(axis=0)
        w = area[s:e]
        if w.sum() > 0:
            center[node] = (cent[s:e] * w[:, None]).sum(axis=0) / w.sum()
        else:
            center[node] = 0.5 * (lo[node] + hi[node])
        radius[node] = np.sqrt(((tri_points[s:e] - center[node]) ** 2).sum(axis=2).max())
    return normal, center, radius


@njit(cache=True)
def closest_point_triangle(px, py, pz, a, b, c):
    """Closest point on triangle abc to p (Ericson, Real-Time Collision Detection 5.1.5)."""
    abx, aby, abz = b[0] - a[0], b[1] - a[1], b[2] - a[2]
    acx, acy, acz = c[0] - a[0], c[1] - a[1], c[2] - a[2]
    apx, apy, apz = px - a[0], py - a[1], pz - a[2]
    d1 = abx * apx + aby * apy + abz * apz
    d2 = acx * apx + acy * apy + acz * apz
    if d1 <= 0.0 and d2 <= 0.0:
        return a[0], a[1], a[2]
    bpx, bpy, bpz = px - b[0], py - b[1], pz - b[2]
    d3 = abx * bpx + aby * bpy + abz * bpz
    d4 = acx * bpx + acy * bpy + acz * bpz
    if d3 >= 0.0 and d4 <= d3:
        return b[0], b[1], b[2]
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        return a[0] + v * abx, a[1] + v * aby, a[2] + v * abz
    cpx, cpy, cpz = px - c[0], py - c[1], pz - c[2]
    d5 = abx * cpx + aby * cpy + abz * cpz
    d6 = acx * cpx + acy * cpy + acz * cpz
    if d6 >= 0.0 and d5 <= d6:
        return c[0], c[1], c[2]
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        return a[0] + w * acx, a[1] + w * acy, a[2] + w * acz
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return b[0] + w * (c[0] - b[0]), b[1] + w * (c[1] - b[1]), b[2] + w * (c[2] - b[2])
    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    return (a[0] + abx * v + acx * w, a[1] + aby * v + acy * w, a[2] + abz * v + acz * w)


@njit(cache=True)
def _box_dist2(p, lo, hi):
    d2 = 0.0
    for k in range(3):
        if p[k] < lo[k]:
            t = lo[k] - p[k]
            d2 += t * t
        elif p[k] > hi[k]:
            t = p[k] - hi[k]
            d2 += t * t
    return d2


@njit(cache=True)
def _closest_one(p, cap2, tri_points, lo, hi, left, right, start, count):
    best2 = cap2
    best_tri = -1
    bx = by = bz = 0.0
    px, py, pz = p[0], p[1], p[2]
    stack = np.empty(STACK_SIZE, dtype=np.int64)
    sp = 0
    stack[sp] = 0
    sp += 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        bd2 = _box_dist2(p, lo[node], hi[node])
        if bd2 > best2 or (bd2 == best2 and best_tri >= 0):
            continue
        if left[node] < 0:
            for t in range(start[node], start[node] + count[node]):
                qx, qy, qz = closest_point_triangle(px, py, pz, tri_points[t, 0],
                                                    tri_points[t, 1], tri_points[t, 2])
                d2 = (qx - px) ** 2 + (qy - py) ** 2 + (qz - pz) ** 2
                if d2 < best2 or (best_tri < 0 and d2 <= best2):
                    best2 = d2
                    best_tri = t
                    bx, by, bz = qx, qy, qz
        else:
            l = left[node]
            r = right[node]
            dl = _box_dist2(p, lo[l], hi[l])
            dr = _box_dist2(p, lo[r], hi[r])
            # push the farther child first so the nearer one is visited first
            if dl <= dr:
                stack[sp] = r
                stack[sp + 1] = l
            else:
                stack[sp] = l
                stack[sp + 1] = r
            sp += 2
    return best2, bx, by, bz, best_tri


@njit(cache=True, parallel=True)
def _closest_batch(points, cap2, tri_points, lo, hi, left, right, start, count,
                   dist, cp, tri):
    for i in prange(points.shape[0]):
        d2, qx, qy, qz, t = _closest_one(points[i], cap2, tri_points, lo, hi, left, right,
                                         start, count)
        if t < 0:
            dist[i] = math.sqrt(cap2)
            cp[i, 0] = np.nan
            cp[i, 1] = np.nan
            cp[i, 2] = np.nan
        else:
            dist[i] = math.sqrt(d2)
            cp[i, 0] = qx
            cp[i, 1] = qy
            cp[i, 2] = qz
        tri[i] = t


@njit(cache=True)
def _min_distance_scan(points, tri_points, lo, hi, left, right, start, count):
    best2 = np.inf
    best_i = -1
    for i in range(points.shape[0]):
        d2, _, _, _, t = _closest_one(points[i], best2, tri_points, lo, hi, left, right,
                                      start, count)
        if t >= 0 and (best_i < 0 or d2 < best2):
            best2 = d2
            best_i = i
    return best2, best_i


@njit(cache=True)
def triangle_solid_angle(p, a, b, c):
    """Signed solid angle of triangle abc seen from p (Van Oosterom and Strackee)."""
    ax, ay, az = a[0] - p[0], a[1] - p[1], a[2] - p[2]
    bx, by, bz = b[0] - p[0], b[1] - p[1], b[2] - p[2]
    cx, cy, cz = c[0] - p[0], c[1] - p[1], c[2] - p[2]
    la = math.sqrt(ax * ax + ay * ay + az * az)
    lb = math.sqrt(bx * bx + by * by + bz * bz)
    lc = math.sqrt(cx * cx + cy * cy + cz * cz)
    det = (ax * (by * cz - bz * cy) - ay * (bx * cz - bz * cx) + az * (bx * cy - by * cx))
    div = (la * lb * lc + (ax * bx + ay * by + az * bz) * lc
           + (bx * cx + by * cy + bz * cz) * la + (cx * ax + cy * ay + cz * az) * lb)
    return 2.0 * math.atan2(det, div)


@njit(cache=True)
def _winding_one(p, beta, tri_points, left, right, start, count, normal, center, radius):
    total = 0.0
    stack = np.empty(STACK_SIZE, dtype=np.int64)
    sp = 0
    stack[sp] = 0
    sp += 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        dx = center[node, 0] - p[0]
        dy = center[node, 1] - p[1]
        dz = center[node, 2] - p[2]
        r2 = dx * dx + dy * dy + dz * dz
        br = beta * radius[node]
        if r2 > br * br:
            r = math.sqrt(r2)
            total += (normal[node, 0] * dx + normal[node, 1] * dy + normal[node, 2] * dz) / (r2 * r)
        elif left[node] < 0:
            for t in range(start[node], start[node] + count[node]):
                total += triangle_solid_angle(p, tri_points[t, 0], tri_points[t, 1], tri_points[t, 2])
        else:
            stack[sp] = left[node]
            stack[sp + 1] = right[node]
            sp += 2
    return total / FOUR_PI


@njit(cache=True, parallel=True)
def _winding_batch(points, beta, tri_points, left, right, start, count, normal, center,
                   radius, out):
    for i in prange(points.shape[0]):
        out[i] = _winding_one(points[i], beta, tri_points, left, right, start, count,
                              normal, center, radius)

"""Compiled kernels for support queries and GJK separation distance.

The kernels work on raw ``(n, 3)`` float64 arrays. Overlap is signalled by a
distance of exactly ``0.0`` together with ``overlap=True``; penetration depth
is resolved by the caller (see :mod:`sweptnav.geometry`).
"""
import numpy as np
from numba import njit

_MAX_ITER = 128


@njit(cache=True)
def _dot(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


@njit(cache=True)
def support_index(verts, d):
    """Index of the vertex maximising ``verts[i] . d``; lowest index wins ties."""
    best = 0
    best_val = _dot(verts[0], d)
    for i in range(1, verts.shape[0]):
        val = _dot(verts[i], d)
        if val > best_val:
            best = i
            best_val = val
    return best


@njit(cache=True)
def _closest_segment(a, b, out):
    # closest point to the origin on segment ab; returns kept-vertex mask bits
    ab = b - a
    denom = _dot(ab, ab)
    if denom <= 0.0:
        out[:] = a
        return 1
    t = -_dot(a, ab) / denom
    if t <= 0.0:
        out[:] = a
        return 1
    if t >= 1.0:
        out[:] = b
        return 2
    out[:] = a + t * ab
    return 3


@njit(cache=True)
def _closest_triangle(a, b, c, out):
    # Voronoi-region walk with the query point at the origin.
    ab = b - a
    ac = c - a
    d1 = -_dot(ab, a)
    d2 = -_dot(ac, a)
    if d1 <= 0.0 and d2 <= 0.0:
        out[:] = a
        return 1
    d3 = -_dot(ab, b)
    d4 = -_dot(ac, b)
    if d3 >= 0.0 and d4 <= d3:
        out[:] = b
        return 2
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        out[:] = a + v * ab
        return 3
    d5 = -_dot(ab, c)
    d6 = -_dot(ac, c)
    if d6 >= 0.0 and d5 <= d6:
        out[:] = c
        return 4
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        out[:] = a + w * ac
        return 5
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        out[:] = b + w * (c - b)
        return 6
    s = va + vb + vc
    if s <= 1e-300:
        # collinear triangle: best of the three edges
        tmp = np.empty(3)
        best = 1e300
        mask = 0
        m = _closest_segment(a, b, tmp)
        if _dot(tmp, tmp) < best:
            best = _dot(tmp, tmp)
            out[:] = tmp
            mask = (1 if m & 1 else 0) | (2 if m & 2 else 0)
        m = _closest_segment(a, c, tmp)
        if _dot(tmp, tmp) < best:
            best = _dot(tmp, tmp)
            out[:] = tmp
            mask = (1 if m & 1 else 0) | (4 if m & 2 else 0)
        m = _closest_segment(b, c, tmp)
        if _dot(tmp, tmp) < best:
            best = _dot(tmp, tmp)
            out[:] = tmp
            mask = (2 if m & 1 else 0) | (4 if m & 2 else 0)
        return mask
    denom = 1.0 / s
    v = vb * denom
    w = vc * denom
    out[:] = a + v * ab + w * ac
    return 7


@njit(cache=True)
def _cross(a, b):
    r = np.empty(3)
    r[0] = a[1] * b[2] - a[2] * b[1]
    r[1] = a[2] * b[0] - a[0] * b[2]
    r[2] = a[0] * b[1] - a[1] * b[0]
    return r


@njit(cache=True)
def _reduce(W, n, out):
    """Closest point of simplex ``W[:n]`` to the origin.

    Writes the point into ``out``, compacts ``W`` to the supporting vertices
    and returns the new vertex count (4 means the origin is enclosed).
    """
    if n == 1:
        out[:] = W[0]
        return 1
    if n == 2:
        m = _closest_segment(W[0], W[1], out)
        k = 0
        for i in range(2):
            if m & (1 << i):
                W[k] = W[i]
                k += 1
        return k
    if n == 3:
        m = _closest_triangle(W[0], W[1], W[2], out)
        k = 0
        for i in range(3):
            if m & (1 << i):
                W[k] = W[i]
                k += 1
        return k
    # tetrahedron
    faces = ((0, 1, 2, 3), (0, 1, 3, 2), (0, 2, 3, 1), (1, 2, 3, 0))
    best = 1e300
    best_mask = 0
    best_face = -1
    tmp = np.empty(3)
    inside = True
    for f in range(4):
        i, j, k, o = faces[f]
        nrm = _cross(W[j] - W[i], W[k] - W[i])
        side_o = _dot(nrm, W[o] - W[i])
        side_p = -_dot(nrm, W[i])
        scale = _dot(nrm, nrm)
        degenerate = side_o * side_o <= 1e-24 * scale * (_dot(W[o] - W[i], W[o] - W[i]) + 1e-300)
        if degenerate or side_o * side_p < 0.0:
            inside = False
            m = _closest_triangle(W[i], W[j], W[k], tmp)
            dd = _dot(tmp, tmp)
            if dd < best:
                best = dd
                out[:] = tmp
                best_mask = m
                best_face = f
    if inside:
        out[:] = 0.0
        return 4
    i, j, k, o = faces[best_face]
    idx = (i, j, k)
    keep = np.empty((3, 3))
    cnt = 0
    for t in range(3):
        if best_mask & (1 << t):
            keep[cnt] = W[idx[t]]
            cnt += 1
    for t in range(cnt):
        W[t] = keep[t]
    return cnt


@njit(cache=True)
def gjk_distance(A, B):
    """Separation distance between hull(A) and hull(B).

    Returns ``(distance, overlap)``; ``overlap`` is True when the hulls
    intersect or touch to within 1e-10 m, in which case ``distance`` is 0.
    """
    W = np.zeros((4, 3))
    v = A[0] - B[0]
    W[0] = v
    n = 1
    out = np.empty(3)
    best_vv = _dot(v, v)
    for _ in range(_MAX_ITER):
        vv = _dot(v, v)
        if vv <= 1e-20:
            return 0.0, True
        nd = -v
        w = A[support_index(A, nd)] - B[support_index(B, v)]
        vw = _dot(v, w)
        norm_v = np.sqrt(vv)
        # duality gap: norm_v - vw / norm_v bounds the distance error
        if norm_v - vw / norm_v <= 1e-12 * max(1.0, norm_v):
            return norm_v, False
        dup = False
        for i in range(n):
            dx = W[i] - w
            if _dot(dx, dx) <= 1e-24:
                dup = True
        if dup:
            return norm_v, False
        W[n] = w
        n += 1
        n = _reduce(W, n, out)
        if n == 4:
            return 0.0, True
        new_vv = _dot(out, out)
        if new_vv >= best_vv and new_vv >= vv:
            # no progress: numerical floor reached
            return np.sqrt(min(vv, new_vv)), False
        best_vv = min(best_vv, new_vv)
        v = out.copy()
    return np.sqrt(_dot(v, v)), False


@njit(cache=True)
def aabb_gap(lo_a, hi_a, lo_b, hi_b):
    """Euclidean gap between two axis-aligned boxes (lower bound on distance)."""
    s = 0.0
    for i in range(3):
        g = max(lo_b[i] - hi_a[i], lo_a[i] - hi_b[i], 0.0)
        s += g * g
    return np.sqrt(s)


@njit(cache=True)
def distances_to_set(verts, packed, offsets, lo, hi, cutoff):
    """GJK distance from ``verts`` to every packed obstacle.

    Obstacles whose AABB gap is at least ``cutoff`` are skipped and reported
    as their AABB gap (a lower bound). Returns ``(dists, overlap, exact)``.
    """
    m = offsets.shape[0] - 1
    dists = np.empty(m)
    overlap = np.zeros(m, dtype=np.bool_)
    exact = np.zeros(m, dtype=np.bool_)
    vlo = np.empty(3)
    vhi = np.empty(3)
    for i in range(3):
        vlo[i] = verts[0, i]
        vhi[i] = verts[0, i]
    for r in range(1, verts.shape[0]):
        for i in range(3):
            vlo[i] = min(vlo[i], verts[r, i])
            vhi[i] = max(vhi[i], verts[r, i])
    for j in range(m):
        gap = aabb_gap(vlo, vhi, lo[j], hi[j])
        if gap >= cutoff:
            dists[j] = gap
            continue
        d, ov = gjk_distance(verts, packed[offsets[j]:offsets[j + 1]])
        dists[j] = d
        overlap[j] = ov
        exact[j] = True
    return dists, overlap, exact

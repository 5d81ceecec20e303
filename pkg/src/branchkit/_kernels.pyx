# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled exact neighbour kernels.

For ``nearest`` the reference points are sorted along their widest
coordinate axis and each query sweeps outwards from its position on that
axis, stopping once the gap along it alone exceeds the current best
distance. ``knn_self`` buckets points on a uniform grid instead.
Among equally distant candidates the lowest reference index wins. Squared
distances are formed as ``dx*dx + dy*dy + dz*dz`` in that order so the pure
numpy fallback (plain brute force) produces bitwise-identical output.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()


cdef inline Py_ssize_t _lower_bound(const double[::1] xs, double x) noexcept nogil:
    cdef Py_ssize_t lo = 0, hi = xs.shape[0], mid
    while lo < hi:
        mid = (lo + hi) // 2
        if xs[mid] < x:
            lo = mid + 1
        else:
            hi = mid
    return lo


def _sweep_axis(a):
    return int(np.argmax(np.ptp(np.asarray(a), axis=0))) if a.shape[0] else 0


cdef inline bint _before(double d, Py_ssize_t j, double bd, Py_ssize_t bj) noexcept nogil:
    return d < bd or (d == bd and j < bj)


def nearest(const double[:, ::1] query, const double[:, ::1] ref):
    """Index of, and squared distance to, the nearest ``ref`` row per query row."""
    cdef Py_ssize_t m = query.shape[0], n = ref.shape[0]
    cdef int ax = _sweep_axis(ref)
    order_arr = np.argsort(np.asarray(ref)[:, ax], kind="stable").astype(np.int64)
    sref_arr = np.ascontiguousarray(np.asarray(ref)[order_arr])
    cdef const cnp.int64_t[::1] order = order_arr
    cdef const double[:, ::1] sref = sref_arr
    cdef const double[::1] xs = np.ascontiguousarray(sref_arr[:, ax])
    cdef Py_ssize_t i, j, best, pos
    cdef double qx, qy, qz, qa, g, dx, dy, dz, d, bd
    idx = np.empty(m, dtype=np.int64)
    d2 = np.empty(m, dtype=np.float64)
    cdef cnp.int64_t[::1] idx_v = idx
    cdef double[::1] d2_v = d2
    with nogil:
        for i in range(m):
            qx = query[i, 0]
            qy = query[i, 1]
            qz = query[i, 2]
            qa = query[i, ax]
            bd = INFINITY
            best = n
            pos = _lower_bound(xs, qa)
            for j in range(pos, n):
                g = qa - xs[j]
                if g * g > bd:
                    break
                dx = qx - sref[j, 0]
                dy = qy - sref[j, 1]
                dz = qz - sref[j, 2]
                d = dx * dx + dy * dy + dz * dz
                if _before(d, order[j], bd, best):
                    bd = d
                    best = order[j]
            j = pos - 1
            while j >= 0:
                g = qa - xs[j]
                if g * g > bd:
                    break
                dx = qx - sref[j, 0]
                dy = qy - sref[j, 1]
                dz = qz - sref[j, 2]
                d = dx * dx + dy * dy + dz * dz
                if _before(d, order[j], bd, best):
                    bd = d
                    best = order[j]
                j -= 1
            idx_v[i] = best
            d2_v[i] = bd
    return idx, d2


cdef inline void _insert(double[:, ::1] d2_v, cnp.int64_t[:, ::1] idx_v, Py_ssize_t i, int k,
                         double d, Py_ssize_t j) noexcept nogil:
    cdef int p
    if not _before(d, j, d2_v[i, k - 1], idx_v[i, k - 1]):
        return
    p = k - 1
    while p > 0 and _before(d, j, d2_v[i, p - 1], idx_v[i, p - 1]):
        d2_v[i, p] = d2_v[i, p - 1]
        idx_v[i, p] = idx_v[i, p - 1]
        p -= 1
    d2_v[i, p] = d
    idx_v[i, p] = j


def _sample_kth(const double[:, ::1] pts, const cnp.int64_t[::1] rows, int k):
    """Squared k-th neighbour distance of the given rows, by a sorted sweep."""
    cdef Py_ssize_t n = pts.shape[0], m = rows.shape[0]
    cdef int ax = _sweep_axis(pts)
    order_arr = np.argsort(np.asarray(pts)[:, ax], kind="stable").astype(np.int64)
    rank_arr = np.empty(n, dtype=np.int64)
    rank_arr[order_arr] = np.arange(n)
    cdef const cnp.int64_t[::1] rank = rank_arr
    cdef const double[:, ::1] sp = np.ascontiguousarray(np.asarray(pts)[order_arr])
    best_arr = np.full((m, k), INFINITY)
    cdef double[:, ::1] best = best_arr
    cdef Py_ssize_t r, a, b, p
    cdef double g, dx, dy, dz, d
    with nogil:
        for r in range(m):
            a = rank[rows[r]]
            b = a + 1
            while b < n:
                g = sp[a, ax] - sp[b, ax]
                if g * g > best[r, k - 1]:
                    break
                dx = sp[a, 0] - sp[b, 0]
                dy = sp[a, 1] - sp[b, 1]
                dz = sp[a, 2] - sp[b, 2]
                d = dx * dx + dy * dy + dz * dz
                p = k - 1
                if d < best[r, p]:
                    while p > 0 and d < best[r, p - 1]:
                        best[r, p] = best[r, p - 1]
                        p -= 1
                    best[r, p] = d
                b += 1
            b = a - 1
            while b >= 0:
                g = sp[a, ax] - sp[b, ax]
                if g * g > best[r, k - 1]:
                    break
                dx = sp[a, 0] - sp[b, 0]
                dy = sp[a, 1] - sp[b, 1]
                dz = sp[a, 2] - sp[b, 2]
                d = dx * dx + dy * dy + dz * dz
                p = k - 1
                if d < best[r, p]:
                    while p > 0 and d < best[r, p - 1]:
                        best[r, p] = best[r, p - 1]
                        p -= 1
                    best[r, p] = d
                b -= 1
    return best_arr[:, k - 1]


def _cell_size(pts, int k):
    """Grid cell of 1.5 times the median k-th neighbour distance of a few
    sample rows, enlarged until the grid has at most four cells per row."""
    n = pts.shape[0]
    kk = max(1, min(k, n - 1))
    rows = np.linspace(0, n - 1, min(n, 64)).astype(np.int64)
    kth = _sample_kth(pts, rows, kk)
    kth = kth[np.isfinite(kth)]
    c = 1.5 * float(np.sqrt(np.median(kth))) if kth.size else 0.0
    ext = np.ptp(pts, axis=0)
    c = max(c, 1e-9 * max(float(ext.max()), 1e-300), 1e-300)
    while np.prod(np.floor(ext / c) + 1) > 4.0 * n + 8:
        c *= 2.0
    return c


def knn_self(const double[:, ::1] pts, int k):
    """k nearest other rows per row, ascending by (distance, index).

    Rows are bucketed on a uniform grid whose cell is about the typical
    k-th neighbour distance; each row searches shells of cells outwards
    until its k-th best distance lies strictly inside the searched block.
    """
    cdef Py_ssize_t n = pts.shape[0]
    idx = np.empty((n, k), dtype=np.int64)
    d2 = np.empty((n, k), dtype=np.float64)
    if n == 0:
        return idx, d2
    P = np.asarray(pts)
    lo_arr = P.min(axis=0)
    cdef double c = _cell_size(P, k)
    dims_arr = (np.floor((P.max(axis=0) - lo_arr) / c).astype(np.int64) + 1)
    cdef Py_ssize_t nx = dims_arr[0], ny = dims_arr[1], nz = dims_arr[2]
    cdef double lx = lo_arr[0], ly = lo_arr[1], lz = lo_arr[2]
    cdef Py_ssize_t ncell = nx * ny * nz
    cxyz_arr = np.empty((n, 3), dtype=np.int64)
    start_arr = np.zeros(ncell + 1, dtype=np.int64)
    order_arr = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[:, ::1] cxyz = cxyz_arr
    cdef cnp.int64_t[::1] start = start_arr
    cdef cnp.int64_t[::1] order = order_arr
    cdef Py_ssize_t r, cc
    with nogil:
        # counting sort of rows by cell; rows keep index order within a cell
        for r in range(n):
            cxyz[r, 0] = min(<Py_ssize_t>((pts[r, 0] - lx) / c), nx - 1)
            cxyz[r, 1] = min(<Py_ssize_t>((pts[r, 1] - ly) / c), ny - 1)
            cxyz[r, 2] = min(<Py_ssize_t>((pts[r, 2] - lz) / c), nz - 1)
            cc = (cxyz[r, 0] * ny + cxyz[r, 1]) * nz + cxyz[r, 2]
            start[cc + 1] += 1
        for cc in range(ncell):
            start[cc + 1] += start[cc]
        for r in range(n):
            cc = (cxyz[r, 0] * ny + cxyz[r, 1]) * nz + cxyz[r, 2]
            order[start[cc]] = r
            start[cc] += 1
        for cc in range(ncell, 0, -1):
            start[cc] = start[cc - 1]
        start[0] = 0
    cdef cnp.int64_t[:, ::1] idx_v = idx
    cdef double[:, ::1] d2_v = d2
    cdef Py_ssize_t i, j, p, q, L, ix, iy, iz, x, y, z, x0, x1, y0, y1, z0, z1, cid
    cdef double px, py, pz, dx, dy, dz, d, bound, t
    cdef bint full
    with nogil:
        for i in range(n):
            for p in range(k):
                d2_v[i, p] = INFINITY
                idx_v[i, p] = n
            px = pts[i, 0]
            py = pts[i, 1]
            pz = pts[i, 2]
            ix = cxyz[i, 0]
            iy = cxyz[i, 1]
            iz = cxyz[i, 2]
            L = 0
            while True:
                x0 = ix - L if ix - L > 0 else 0
                x1 = ix + L if ix + L < nx - 1 else nx - 1
                y0 = iy - L if iy - L > 0 else 0
                y1 = iy + L if iy + L < ny - 1 else ny - 1
                z0 = iz - L if iz - L > 0 else 0
                z1 = iz + L if iz + L < nz - 1 else nz - 1
                for x in range(x0, x1 + 1):
                    for y in range(y0, y1 + 1):
                        for z in range(z0, z1 + 1):
                            # shell only: skip cells searched at smaller L
                            if (x - ix if x >= ix else ix - x) < L and (y - iy if y >= iy else iy - y) < L \
                                    and (z - iz if z >= iz else iz - z) < L:
                                continue
                            cid = (x * ny + y) * nz + z
                            for q in range(start[cid], start[cid + 1]):
                                j = order[q]
                                if j == i:
                                    continue
                                dx = px - pts[j, 0]
                                dy = py - pts[j, 1]
                                dz = pz - pts[j, 2]
                                d = dx * dx + dy * dy + dz * dz
                                _insert(d2_v, idx_v, i, k, d, j)
                full = x0 == 0 and y0 == 0 and z0 == 0 and x1 == nx - 1 and y1 == ny - 1 and z1 == nz - 1
                if full:
                    break
                # distance from the row to the nearest face of the searched block
                bound = INFINITY
                if x0 > 0:
                    t = px - (lx + x0 * c)
                    bound = t if t < bound else bound
                if x1 < nx - 1:
                    t = (lx + (x1 + 1) * c) - px
                    bound = t if t < bound else bound
                if y0 > 0:
                    t = py - (ly + y0 * c)
                    bound = t if t < bound else bound
                if y1 < ny - 1:
                    t = (ly + (y1 + 1) * c) - py
                    bound = t if t < bound else bound
                if z0 > 0:
                    t = pz - (lz + z0 * c)
                    bound = t if t < bound else bound
                if z1 < nz - 1:
                    t = (lz + (z1 + 1) * c) - pz
                    bound = t if t < bound else bound
                if bound > 0 and d2_v[i, k - 1] < bound * bound:
                    break
                L += 1
    return idx, d2

"""Pure numpy versions of the neighbour kernels in ``_kernels.pyx``."""
import numpy as np

# rows of the (chunk, n) distance block; bounds peak memory at ~chunk*n*8 bytes
_CHUNK = 512


def _sqdist(q, r):
    dx = q[:, None, 0] - r[None, :, 0]
    dy = q[:, None, 1] - r[None, :, 1]
    dz = q[:, None, 2] - r[None, :, 2]
    return dx * dx + dy * dy + dz * dz


def nearest(query, ref):
    m = query.shape[0]
    idx = np.empty(m, dtype=np.int64)
    d2 = np.empty(m, dtype=np.float64)
    for lo in range(0, m, _CHUNK):
        block = _sqdist(query[lo:lo + _CHUNK], ref)
        j = np.argmin(block, axis=1)  # argmin returns the first minimum
        idx[lo:lo + _CHUNK] = j
        d2[lo:lo + _CHUNK] = block[np.arange(len(j)), j]
    return idx, d2


def knn_self(pts, k):
    n = pts.shape[0]
    idx = np.empty((n, k), dtype=np.int64)
    d2 = np.empty((n, k), dtype=np.float64)
    for lo in range(0, n, _CHUNK):
        block = _sqdist(pts[lo:lo + _CHUNK], pts)
        rows = np.arange(block.shape[0])
        block[rows, rows + lo] = np.inf
        cand = np.argpartition(block, k - 1, axis=1)[:, :k]
        cd = np.take_along_axis(block, cand, axis=1)
        kth = cd.max(axis=1, keepdims=True)
        # argpartition picks arbitrarily among ties at the k-th distance
        ambiguous = (block <= kth).sum(axis=1) > k
        order = np.lexsort((cand, cd), axis=1)
        cand = np.take_along_axis(cand, order, axis=1)
        if ambiguous.any():
            r = np.flatnonzero(ambiguous)
            cand[r] = np.argsort(block[r], axis=1, kind="stable")[:, :k]
        idx[lo:lo + _CHUNK] = cand
        d2[lo:lo + _CHUNK] = np.take_along_axis(block, cand, axis=1)
    return idx, d2

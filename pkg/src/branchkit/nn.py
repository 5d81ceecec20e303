"""Exact nearest-neighbour queries used by every loss and estimator.

The compiled kernels are used when the extension is importable; otherwise
the numpy implementation is selected. Set ``BRANCHKIT_PURE_PYTHON=1`` to
force the fallback. Both backends return identical results, including the
lowest-index rule for ties.
"""
import os

import numpy as np

from . import _kernels_py

if os.environ.get("BRANCHKIT_PURE_PYTHON"):
    _ext = None
else:
    try:
        from . import _kernels as _ext
    except ImportError:
        _ext = None

BACKEND = "compiled" if _ext is not None else "python"

_BACKENDS = {"python": _kernels_py}
if _ext is not None:
    _BACKENDS["compiled"] = _ext


def available_backends():
    return sorted(_BACKENDS)


def _prep(a):
    return np.ascontiguousarray(a, dtype=np.float64).reshape(-1, 3)


def nearest(query, ref, backend=None):
    """For each query point, the index of the nearest reference point and the
    squared distance to it.

    Parameters
    ----------
    query : (m, 3) array_like
    ref : (n, 3) array_like
        Must be non-empty.
    backend : {"compiled", "python"}, optional
        Defaults to the import-time selection.

    Returns
    -------
    idx : (m,) int64 ndarray
    d2 : (m,) float64 ndarray
    """
    q, r = _prep(query), _prep(ref)
    if r.shape[0] == 0:
        raise ValueError("reference set is empty")
    mod = _BACKENDS[backend or BACKEND]
    return mod.nearest(q, r)


def knn_self(points, k, backend=None):
    """k nearest neighbours of every point within the same set (self excluded).

    Neighbours are ordered by ascending squared distance, ties by index.
    """
    p = _prep(points)
    if not 1 <= k < p.shape[0]:
        raise ValueError(f"need 1 <= k < n, got k={k}, n={p.shape[0]}")
    mod = _BACKENDS[backend or BACKEND]
    return mod.knn_self(p, int(k))

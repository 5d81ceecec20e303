"""Ground-truth traits of generated branches, measured on the exact model."""
import numpy as np

DEFAULT_OFFSET = 0.02
DEFAULT_WINDOW = 0.05


def line_direction(points):
    """Least-squares line direction through ``points``, oriented first -> last."""
    p = np.asarray(points, dtype=np.float64)
    centered = p - p.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    d = vt[0]
    if np.dot(d, p[-1] - p[0]) < 0:
        d = -d
    return d


def angle_between(d, axis):
    axis = np.asarray(axis, dtype=np.float64)
    c = np.dot(d, axis) / (np.linalg.norm(d) * np.linalg.norm(axis))
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


def branch_truth(model, trunk_axis=(0.0, 0.0, 1.0), height=None,
                 offset=DEFAULT_OFFSET, window=DEFAULT_WINDOW, branch_id=None):
    """Trait sidecar for one branch model.

    Diameter is taken at ``offset`` metres of arc-length from the base and
    the angle from the centerline direction over the first ``window``
    metres, matching where the estimators measure.
    """
    w = min(window, model.length)
    s = np.linspace(0.0, w, 101)
    d = line_direction(model.centerline(s))
    base = model.centerline(0.0)
    return {
        "branch_id": branch_id if branch_id is not None else model.id,
        "diameter_mm": float(2000.0 * model.taper.radius(min(offset, model.length))),
        "angle_deg": angle_between(d, trunk_axis),
        "length_cm": float(100.0 * model.length),
        "height_m": float(base[2] if height is None else height),
        "tangent_angle_deg": angle_between(model.tangent(0.0), trunk_axis),
    }


def tree_truth(tree, offset=DEFAULT_OFFSET, window=DEFAULT_WINDOW):
    out = []
    for i, (model, attach) in enumerate(tree.branches):
        s_a = attach * tree.trunk.length
        axis = tree.trunk.tangent(s_a)
        height = float(tree.trunk.centerline(s_a)[2])
        out.append(branch_truth(model, axis, height, offset, window))
    return out

"""Point-set losses with analytic gradients.

Every loss returns a :class:`LossValue` holding the scalar and its gradient
with respect to the predicted points. Nearest-neighbour assignments use
exact search with the lowest index winning ties, so gradients are
deterministic; at coincident points the distance subgradient is taken as 0.
"""
from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

import numpy as np

from . import nn
from .errors import EmptyCloud, EmptySkeleton, InvalidParams, TooFewPoints
from .synth_gen.types import as_points

L1 = "l1"
L2 = "l2"


@dataclass
class LossValue:
    value: float
    gradient: Union[np.ndarray, List[np.ndarray]]
    radius_gradient: Optional[np.ndarray] = None

    def __float__(self):
        return self.value


@dataclass(frozen=True)
class LossWeights:
    lambda_skeleton: float = 0.01
    lambda_variance: float = 10.0

    def __post_init__(self):
        if self.lambda_skeleton < 0 or self.lambda_variance < 0:
            raise InvalidParams("loss weights must be >= 0")


@dataclass(frozen=True)
class DiscriminatorScores:
    d_gt: float
    d_r: float

    def __post_init__(self):
        if not (np.isfinite(self.d_gt) and np.isfinite(self.d_r)):
            raise InvalidParams("discriminator scores must be finite")


def _nonempty(p, what="cloud"):
    p = as_points(p)
    if len(p) == 0:
        raise EmptyCloud(f"{what} is empty")
    return p


def _scatter(n, idx, rows):
    """Sum ``rows`` into an (n, 3) array at ``idx`` in index order."""
    out = np.empty((n, 3))
    for k in range(3):
        out[:, k] = np.bincount(idx, weights=rows[:, k], minlength=n)
    return out


def _unit_diff(a, b, d):
    """(a - b) / d with rows where d == 0 set to zero."""
    diff = a - b
    scale = np.divide(1.0, d, out=np.zeros_like(d), where=d > 0)
    return diff * scale[:, None]


def directed_chamfer(src, pred, norm: str = L1, value_only: bool = False):
    """(1/|src|) sum over src of the distance to the nearest ``pred`` point.

    The gradient is with respect to ``pred``.
    """
    src = _nonempty(src, "source cloud")
    pred = _nonempty(pred, "predicted cloud")
    idx, d2 = nn.nearest(src, pred)
    if norm == L1:
        d = np.sqrt(d2)
        value = float(np.mean(d))
        if value_only:
            return value
        rows = _unit_diff(pred[idx], src, d) / len(src)
    elif norm == L2:
        value = float(np.mean(d2))
        if value_only:
            return value
        rows = 2.0 * (pred[idx] - src) / len(src)
    else:
        raise InvalidParams(f"unknown norm {norm!r}")
    return LossValue(value, _scatter(len(pred), idx, rows))


def chamfer(pred, gt, norm: str = L1) -> LossValue:
    """Symmetric Chamfer distance; gradient with respect to ``pred``.

    ``norm="l1"`` averages raw nearest-neighbour distances (CD-l1),
    ``norm="l2"`` averages squared distances.
    """
    pred = _nonempty(pred, "predicted cloud")
    gt = _nonempty(gt, "ground-truth cloud")
    fwd = directed_chamfer(gt, pred, norm)
    idx, d2 = nn.nearest(pred, gt)
    if norm == L1:
        d = np.sqrt(d2)
        back = float(np.mean(d))
        grad = _unit_diff(pred, gt[idx], d) / len(pred)
    else:
        back = float(np.mean(d2))
        grad = 2.0 * (pred - gt[idx]) / len(pred)
    return LossValue(fwd.value + back, fwd.gradient + grad)


def chamfer_value(a, b, norm: str = L1) -> float:
    return chamfer(a, b, norm).value


def default_bandwidth(points) -> float:
    p = as_points(points)
    return 0.03 * float(np.linalg.norm(p.max(axis=0) - p.min(axis=0)))


def repulsion(pred, k: int = 5, h: Optional[float] = None, value_only: bool = False):
    """Neighbour repulsion: mean over k-NN pairs of -d * exp(-d^2 / h^2).

    ``h`` defaults to 3% of the bounding-box diagonal. Always <= 0.
    """
    pred = as_points(pred)
    if not 1 <= k < len(pred):
        raise TooFewPoints(f"repulsion needs more than k={k} points, got {len(pred)}")
    if h is None:
        h = default_bandwidth(pred)
    if not h > 0:
        raise InvalidParams("bandwidth h must be > 0")
    n = len(pred)
    idx, d2 = nn.knn_self(pred, k)
    w = np.exp(-d2 / (h * h))
    d = np.sqrt(d2)
    value = float(np.sum(-d * w) / (n * k))
    if value_only:
        return value
    # d/dd of -d exp(-d^2/h^2)
    dphi = -w * (1.0 - 2.0 * d2 / (h * h))
    i = np.repeat(np.arange(n), k)
    j = idx.reshape(-1)
    rows = _unit_diff(pred[i], pred[j], d.reshape(-1)) * (dphi.reshape(-1) / (n * k))[:, None]
    grad = _scatter(n, i, rows) - _scatter(n, j, rows)
    return LossValue(value, grad)


def _variance_one(cloud, skel, value_only):
    cloud = _nonempty(cloud, "cloud")
    idx, d2 = nn.nearest(cloud, skel)
    d = np.sqrt(d2)
    n = len(d)
    mu = float(np.mean(d))
    value = float(np.mean((d - mu) ** 2))
    if value_only:
        return value, None
    coef = 2.0 * (d - mu) / n
    grad = _unit_diff(cloud, skel[idx], d) * coef[:, None]
    return value, grad


def _is_point_list(obj):
    try:
        return np.asarray(obj, dtype=np.float64).ndim == 2
    except ValueError:
        return False


def variance_loss(pred_clouds, skeleton_gt, value_only: bool = False):
    """Sum over clouds of the population variance of point-to-skeleton distances.

    Each point's distance is to its nearest skeleton point. Pass a list of
    clouds to get a list of gradients back, or a single cloud (an array or
    nested list of shape (n, 3)) for a single gradient array.
    """
    skel = as_points(skeleton_gt)
    if len(skel) == 0:
        raise EmptySkeleton("skeleton is empty")
    single = not isinstance(pred_clouds, (list, tuple)) or _is_point_list(pred_clouds)
    clouds = [pred_clouds] if single else list(pred_clouds)
    if not clouds:
        raise EmptyCloud("no clouds given")
    total, grads = 0.0, []
    for c in clouds:
        v, g = _variance_one(as_points(c), skel, value_only)
        total += v
        grads.append(g)
    if value_only:
        return total
    return LossValue(total, grads[0] if single else grads)


def grouped_variance_loss(cloud, skeleton_gt, groups, value_only: bool = False):
    """``variance_loss`` of the sub-clouds ``cloud[groups == g]``, summed over g.

    Same value as passing the split clouds as a list, computed with one
    neighbour query. ``groups`` holds one integer label per point.
    """
    pts = _nonempty(cloud, "cloud")
    skel = as_points(skeleton_gt)
    if len(skel) == 0:
        raise EmptySkeleton("skeleton is empty")
    lab = np.asarray(groups).reshape(-1)
    if len(lab) != len(pts):
        raise InvalidParams("one group label per point is required")
    _, inv = np.unique(lab, return_inverse=True)
    idx, d2 = nn.nearest(pts, skel)
    d = np.sqrt(d2)
    cnt = np.bincount(inv).astype(np.float64)
    mu = np.bincount(inv, weights=d) / cnt
    dev = d - mu[inv]
    value = float(np.sum(np.bincount(inv, weights=dev * dev) / cnt))
    if value_only:
        return value
    coef = 2.0 * dev / cnt[inv]
    return LossValue(value, _unit_diff(pts, skel[idx], d) * coef[:, None])


def sphere_directions(n_spheres: int, samples_per_sphere: int, seed: int) -> np.ndarray:
    """Uniform unit vectors, shape (n_spheres, samples_per_sphere, 3)."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((n_spheres, samples_per_sphere, 3))
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def skeleton_sampling_loss(centers, radii, gt_cloud, samples_per_sphere: int = 16, seed: int = 0) -> LossValue:
    """Chamfer-l1 between points drawn on skeletal sphere surfaces and ``gt_cloud``.

    ``gradient`` is with respect to the sphere centers and
    ``radius_gradient`` with respect to the radii.
    """
    centers = as_points(centers)
    radii = np.asarray(radii, dtype=np.float64).reshape(-1)
    if len(centers) == 0:
        raise EmptySkeleton("no skeletal spheres")
    if len(radii) != len(centers):
        raise InvalidParams("centers and radii length differ")
    if np.any(radii < 0):
        raise InvalidParams("sphere radii must be >= 0")
    if samples_per_sphere < 1:
        raise InvalidParams("samples_per_sphere must be >= 1")
    gt = _nonempty(gt_cloud, "ground-truth cloud")
    u = sphere_directions(len(centers), samples_per_sphere, seed)
    q = (centers[:, None, :] + radii[:, None, None] * u).reshape(-1, 3)
    cd = chamfer(q, gt, L1)
    gq = cd.gradient.reshape(len(centers), samples_per_sphere, 3)
    return LossValue(cd.value, gq.sum(axis=1), np.sum(gq * u, axis=(1, 2)))


def skeleton_cd_loss(pred_skeleton, gt_skeleton) -> LossValue:
    return chamfer(pred_skeleton, gt_skeleton, L1)


def adversarial_losses(scores: DiscriminatorScores, conventional: bool = False) -> Tuple[float, float]:
    """Least-squares generator / discriminator losses.

    By default the roles are exactly ``L_G = (D(gt) - 1)^2`` and
    ``L_D = D(gt)^2 + (D(r) - 1)^2``. ``conventional=True`` swaps in the usual
    LSGAN assignment (generator pushes D(r) to 1, discriminator pushes D(gt)
    to 1 and D(r) to 0).
    """
    g, r = float(scores.d_gt), float(scores.d_r)
    if conventional:
        return (r - 1.0) ** 2, r ** 2 + (g - 1.0) ** 2
    return (g - 1.0) ** 2, g ** 2 + (r - 1.0) ** 2


def joint_loss(cd, rep, adv_g, skel, var, w: LossWeights = LossWeights(), variance_enabled: bool = True) -> float:
    vals = np.array([cd, rep, adv_g, skel, var], dtype=np.float64)
    if not np.all(np.isfinite(vals)):
        raise InvalidParams("joint loss components must be finite")
    total = cd + rep + adv_g + w.lambda_skeleton * skel
    if variance_enabled:
        total += w.lambda_variance * var
    return float(total)

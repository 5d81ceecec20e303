"""Non-learned completion: skeleton estimate, coarse tube, loss-driven refinement."""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import least_squares

from . import losses, nn
from .errors import Divergence, InvalidParams, TooSparse
from .synth_gen.types import PointCloud, Skeleton, as_points

TRACE_DTYPE = np.dtype([("step", np.int64), ("cd", np.float64), ("rep", np.float64),
                        ("var", np.float64), ("total", np.float64)])


# -- circle fitting -----------------------------------------------------------
def fit_circle_kasa(xy):
    """Algebraic least-squares circle through 2-D points.

    Returns ``(center, radius)``; raises :class:`TooSparse` for fewer than 3
    points or a degenerate (collinear) configuration.
    """
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    if len(xy) < 3:
        raise TooSparse("circle fit needs at least 3 points")
    mu = xy.mean(axis=0)
    x, y = (xy - mu).T
    A = np.column_stack([x, y, np.ones_like(x)])
    b = -(x * x + y * y)
    sol, _, rank, _ = np.linalg.lstsq(A, b, rcond=None)
    if rank < 3:
        raise TooSparse("degenerate circle fit")
    cx, cy = -0.5 * sol[0], -0.5 * sol[1]
    r2 = cx * cx + cy * cy - sol[2]
    if not r2 > 0:
        raise TooSparse("degenerate circle fit")
    return mu + np.array([cx, cy]), float(np.sqrt(r2))


def fit_circle_geometric(xy, debias: bool = False):
    """Circle minimising the sum of squared point-to-circle distances.

    Levenberg-Marquardt started from the algebraic fit, which it refines;
    unlike the algebraic fit it does not shrink towards small radii on
    noisy partial arcs. With ``debias`` the radius is reduced by
    ``s**2 / (2 r)`` (``s`` the RMS residual), removing the first-order
    inflation that isotropic point noise adds to distances from the center.
    """
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    c0, r0 = fit_circle_kasa(xy)

    def resid(p):
        return np.hypot(xy[:, 0] - p[0], xy[:, 1] - p[1]) - p[2]

    def jac(p):
        dx, dy = xy[:, 0] - p[0], xy[:, 1] - p[1]
        d = np.maximum(np.hypot(dx, dy), 1e-300)
        return np.column_stack([-dx / d, -dy / d, -np.ones_like(d)])

    sol = least_squares(resid, [c0[0], c0[1], r0], jac=jac, method="lm")
    if not (sol.success and np.all(np.isfinite(sol.x)) and sol.x[2] > 0):
        return c0, r0
    r = float(sol.x[2])
    if debias:
        r -= float(np.mean(sol.fun ** 2)) / (2.0 * r)
    return sol.x[:2].copy(), r


CIRCLE_FITS = {
    "kasa": fit_circle_kasa,
    "geometric": fit_circle_geometric,
    "geometric-debiased": lambda xy: fit_circle_geometric(xy, debias=True),
}


def arc_coverage(xy, center):
    """Angular extent (radians) covered by points around ``center``."""
    a = np.sort(np.arctan2(xy[:, 1] - center[1], xy[:, 0] - center[0]))
    if len(a) < 2:
        return 0.0
    gaps = np.diff(np.concatenate([a, [a[0] + 2 * np.pi]]))
    return float(2 * np.pi - gaps.max())


def plane_basis(t):
    helper = np.eye(3)[np.argmin(np.abs(t))]
    e1 = np.cross(t, helper)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(t, e1)


# -- polyline helpers -----------------------------------------------------------
def project_to_polyline(points, nodes):
    """Arc coordinate and foot point of each point on a polyline.

    Points beyond either end are extrapolated along the end segments, so
    coordinates may fall outside ``[0, length]``.
    """
    seg = np.diff(nodes, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    rel = points[:, None, :] - nodes[None, :-1, :]
    u = np.einsum("nkd,kd->nk", rel, seg) / (seg_len ** 2)
    lo = np.zeros(len(seg))
    hi = np.ones(len(seg))
    lo[0] = -np.inf
    hi[-1] = np.inf
    uc = np.clip(u, lo, hi)
    foot = nodes[None, :-1, :] + uc[..., None] * seg[None]
    d2 = np.sum((points[:, None, :] - foot) ** 2, axis=-1)
    k = np.argmin(d2, axis=1)
    rows = np.arange(len(points))
    sigma = cum[k] + uc[rows, k] * seg_len[k]
    return sigma, foot[rows, k]


def _polyline_at(nodes, sigma):
    seg = np.diff(nodes, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    k = np.clip(np.searchsorted(cum, sigma, side="right") - 1, 0, len(seg) - 1)
    w = (sigma - cum[k]) / seg_len[k]
    return nodes[k] + w[:, None] * seg[k], seg[k] / seg_len[k, None]


def _poly_centers(x, centers, weights, deg):
    sw = np.sqrt(weights)
    coefs = [np.polynomial.polynomial.polyfit(x, centers[:, c], deg, w=sw) for c in range(3)]
    fitted = np.column_stack([np.polynomial.polynomial.polyval(x, cf) for cf in coefs])
    rss = float(np.sum(weights[:, None] * (centers - fitted) ** 2))
    return coefs, rss


def _smooth_centers(sig, centers, weights, query, degree="auto"):
    """Polynomial center curve in arc-length; ``degree="auto"`` picks 2 to 5 by BIC."""
    x0, span = sig.mean(), max(np.ptp(sig), 1e-12)
    x = (sig - x0) / span
    w = weights / weights.mean()
    n = len(sig)
    if degree == "auto":
        best = None
        for deg in range(2, min(5, n - 1) + 1):
            coefs, rss = _poly_centers(x, centers, w, deg)
            bic = 3 * n * np.log(max(rss, 1e-300) / (3 * n)) + 3 * (deg + 1) * np.log(3 * n)
            if best is None or bic < best[0]:
                best = (bic, coefs)
        coefs = best[1]
    else:
        coefs, _ = _poly_centers(x, centers, w, int(min(degree, n - 1)))
    q = (query - x0) / span
    return np.column_stack([np.polynomial.polynomial.polyval(q, cf) for cf in coefs])


def _robust_line(x, y, w):
    """Weighted straight-line fit with one round of outlier rejection."""
    keep = np.ones(len(x), dtype=bool)
    for _ in range(2):
        if keep.sum() < 2:
            keep[:] = True
        A = np.column_stack([np.ones(keep.sum()), x[keep]]) * np.sqrt(w[keep])[:, None]
        coef, *_ = np.linalg.lstsq(A, y[keep] * np.sqrt(w[keep]), rcond=None)
        res = y - (coef[0] + coef[1] * x)
        mad = np.median(np.abs(res[keep] - np.median(res[keep]))) + 1e-12
        keep = np.abs(res) <= 3.5 * 1.4826 * mad
    return coef


# -- skeleton estimation ------------------------------------------------------------
def estimate_skeleton(partial, slice_count: int = 30, base_point=None, min_bin_points: int = 8,
                      min_arc: float = np.pi / 3, passes: int = 3, circle_fit: str = "geometric-debiased",
                      degree="auto") -> Skeleton:
    """Skeleton of a single branch cloud.

    The cloud is sliced along its principal axis; each slice contributes a
    circle-fit center and radius in the plane normal to the local axis.
    Slices that are empty, too sparse or cover too short an arc are bridged
    by the smooth center curve fitted through the usable ones. The local
    axis is re-estimated from the fitted centers for ``passes`` rounds, which lets slices follow curved branches. Centers
    are smoothed with a polynomial in arc-length (``degree``, or "auto" to
    choose by BIC) and radii with a
    straight-line (taper) fit. The first sphere sits at the end nearest
    ``base_point`` (default: the lower end in z). ``circle_fit`` selects the
    slice fit: "geometric-debiased", "geometric" or "kasa".
    """
    if circle_fit not in CIRCLE_FITS:
        raise InvalidParams(f"unknown circle fit {circle_fit!r}")
    if degree != "auto" and not (isinstance(degree, int) and degree >= 1):
        raise InvalidParams("degree must be 'auto' or an integer >= 1")
    fit = CIRCLE_FITS[circle_fit]
    pts = as_points(partial)
    if len(pts) < 10 * slice_count:
        raise TooSparse(f"need at least {10 * slice_count} points, got {len(pts)}")
    mu = pts.mean(axis=0)
    _, vecs = np.linalg.eigh(np.cov((pts - mu).T))
    axis = vecs[:, -1]
    if base_point is not None:
        if np.dot(np.asarray(base_point, dtype=np.float64) - mu, axis) > 0:
            axis = -axis
    elif axis[2] < 0:
        axis = -axis
    proj = (pts - mu) @ axis
    nodes = mu + np.linspace(proj.min(), proj.max(), slice_count + 1)[:, None] * axis

    for _ in range(passes):
        sigma, foot = project_to_polyline(pts, nodes)
        s_lo, s_hi = sigma.min(), sigma.max()
        width = (s_hi - s_lo) / slice_count
        mids = s_lo + (np.arange(slice_count) + 0.5) * width
        bins = np.clip(((sigma - s_lo) / width).astype(int), 0, slice_count - 1)
        c_mid, t_mid = _polyline_at(nodes, np.clip(mids, 0.0, None))
        # extrapolate mids that fall before the polyline start
        c_mid = c_mid + np.minimum(mids, 0.0)[:, None] * t_mid
        centers = np.full((slice_count, 3), np.nan)
        radii = np.full(slice_count, np.nan)
        counts = np.zeros(slice_count)
        for k in range(slice_count):
            sel = bins == k
            if sel.sum() < min_bin_points:
                continue
            t = t_mid[k]
            e1, e2 = plane_basis(t)
            rel = pts[sel] - foot[sel]
            xy = np.column_stack([rel @ e1, rel @ e2])
            try:
                c2, r = fit(xy)
            except TooSparse:
                continue
            if arc_coverage(xy, c2) < min_arc or r > 0.5 * (s_hi - s_lo):
                continue
            centers[k] = c_mid[k] + c2[0] * e1 + c2[1] * e2
            radii[k] = r
            counts[k] = sel.sum()
        ok = np.isfinite(radii)
        if ok.sum() < 3:
            raise TooSparse(f"only {int(ok.sum())} usable slices")
        query = np.concatenate([[s_lo], mids, [s_hi]])
        smooth = _smooth_centers(mids[ok], centers[ok], counts[ok], query, degree)
        nodes = smooth
    coef = _robust_line(mids[ok], radii[ok], counts[ok])
    rad = coef[0] + coef[1] * query
    floor = max(1e-4, 0.25 * np.median(radii[ok]))
    rad = np.maximum(rad, floor)
    skel = Skeleton(smooth, rad)
    if base_point is not None:
        bp = np.asarray(base_point, dtype=np.float64)
        if np.linalg.norm(skel.centers[-1] - bp) < np.linalg.norm(skel.centers[0] - bp):
            skel = Skeleton(skel.centers[::-1], skel.radii[::-1])
    return skel


# -- coarse completion ----------------------------------------------------------------
def synthesize_coarse(skeleton: Skeleton, output_count: int, seed: int = 0) -> PointCloud:
    """Points uniform by area on the chain of cone frusta joining the skeletal spheres."""
    if output_count < 1:
        raise InvalidParams("output_count must be >= 1")
    c, r = skeleton.centers, skeleton.radii
    axis = np.diff(c, axis=0)
    h = np.linalg.norm(axis, axis=1)
    slant = np.sqrt(h * h + (r[1:] - r[:-1]) ** 2)
    area = np.pi * (r[:-1] + r[1:]) * slant
    rng = np.random.default_rng(seed)
    seg = rng.choice(len(h), size=output_count, p=area / area.sum())
    u = rng.random(output_count)
    theta = rng.random(output_count) * 2 * np.pi
    r0, r1 = r[seg], r[seg + 1]
    # inverse CDF of the density proportional to r(x) = r0 + (r1 - r0) x on [0, 1]
    dr = r1 - r0
    target = u * 0.5 * (r0 + r1)
    lin = np.abs(dr) < 1e-15 * np.maximum(r0, 1.0)
    safe = np.where(lin, 1.0, dr)
    x = np.where(lin, u, (-r0 + np.sqrt(np.maximum(r0 * r0 + 2 * safe * target, 0.0))) / safe)
    x = np.clip(x, 0.0, 1.0)
    t = axis[seg] / h[seg, None]
    pts = np.empty((output_count, 3))
    for k in np.unique(seg):
        sel = seg == k
        e1, e2 = plane_basis(t[sel][0])
        rad = (r0[sel] + dr[sel] * x[sel])[:, None]
        ring = np.cos(theta[sel])[:, None] * e1 + np.sin(theta[sel])[:, None] * e2
        pts[sel] = c[k] + x[sel, None] * axis[k] + rad * ring
    return PointCloud(pts)


# -- refinement ---------------------------------------------------------------------------
@dataclass
class CompletionConfig:
    output_count: int = 2048
    steps: int = 20
    step_size: float = 1.0
    weights: losses.LossWeights = field(default_factory=losses.LossWeights)
    variance_activation_step: int = 0
    repulsion_k: int = 5
    repulsion_h: Optional[float] = None
    armijo: float = 1e-4
    max_backtracks: int = 20
    slice_count: int = 30
    variance_mode: str = "section"

    def __post_init__(self):
        if self.output_count < 1 or self.steps < 0:
            raise InvalidParams("output_count must be >= 1 and steps >= 0")
        if not self.step_size > 0:
            raise InvalidParams("step_size must be > 0")
        if self.variance_mode not in ("section", "cloud"):
            raise InvalidParams("variance_mode must be 'section' or 'cloud'")


@dataclass
class CompletionResult:
    completed: PointCloud
    coarse: PointCloud
    skeleton_est: Skeleton
    loss_trace: np.ndarray
    partial: Optional[PointCloud] = None


def dense_skeleton_points(skeleton: Skeleton, spacing_frac: float = 0.25, cap: int = 4000) -> np.ndarray:
    """Skeleton polyline resampled finely enough for point-to-skeleton distances
    to track the true axis distance (spacing a fraction of the smallest radius)."""
    step = spacing_frac * float(skeleton.radii.min())
    n = int(np.clip(np.ceil(skeleton.length / step) + 1, 2, cap))
    return skeleton.point_at(np.linspace(0.0, skeleton.length, n))


def distance_to_polyline(points, nodes):
    _, foot = project_to_polyline(points, nodes)
    # extrapolated feet lie beyond the ends; clamp them back onto the polyline
    seg = np.diff(nodes, axis=0)
    d_start = np.sum((points - nodes[0]) * seg[0], axis=1) < 0
    d_end = np.sum((points - nodes[-1]) * seg[-1], axis=1) > 0
    foot = np.where(d_start[:, None], nodes[0], foot)
    foot = np.where(d_end[:, None], nodes[-1], foot)
    return np.linalg.norm(points - foot, axis=1)


class _Objective:
    """Refinement objective in a normalised frame (unit bounding-box diagonal)."""

    def __init__(self, partial, skel_pts, cfg: CompletionConfig, h, const, groups=None):
        self.partial = partial
        self.skel = skel_pts
        self.cfg = cfg
        self.h = h
        self.const = const
        self.groups = groups

    def variance(self, x, grad=True):
        if self.groups is None:
            if not grad:
                return losses.variance_loss(x, self.skel, value_only=True), None
            vv = losses.variance_loss(x, self.skel)
        else:
            if not grad:
                return losses.grouped_variance_loss(x, self.skel, self.groups, value_only=True), None
            vv = losses.grouped_variance_loss(x, self.skel, self.groups)
        return vv.value, vv.gradient

    def parts(self, x, var_on, grad=True):
        w = self.cfg.weights
        if not grad:
            cd = losses.directed_chamfer(self.partial, x, value_only=True)
            rep = losses.repulsion(x, self.cfg.repulsion_k, self.h, value_only=True)
            var = self.variance(x, grad=False)[0] if var_on else 0.0
            total = cd + rep + (w.lambda_variance * var if var_on else 0.0) + self.const
            return cd, rep, var, total, None
        cdv = losses.directed_chamfer(self.partial, x)
        repv = losses.repulsion(x, self.cfg.repulsion_k, self.h)
        g = cdv.gradient + repv.gradient
        var = 0.0
        if var_on:
            var, gv = self.variance(x)
            g = g + w.lambda_variance * gv
        total = cdv.value + repv.value + (w.lambda_variance * var if var_on else 0.0) + self.const
        return cdv.value, repv.value, var, total, g


def refine(coarse, partial, skeleton: Skeleton, cfg: CompletionConfig = None,
           gt_skeleton=None) -> CompletionResult:
    """Gradient descent with Armijo backtracking on the completion objective.

    The objective is the coverage of the partial cloud (mean distance from
    each observed point to its nearest completed point), plus repulsion,
    plus the weighted variance of completed-point distances to the skeleton
    once ``variance_activation_step`` is reached. With ``variance_mode``
    "section" the variance is summed over cross-sections (coarse points
    grouped by their nearest skeletal sphere), so a tapered branch is not
    pulled towards one radius; "cloud" takes it over the whole cloud. When ``gt_skeleton`` is
    given, the skeleton Chamfer term is added as a constant so the trace
    reports the full joint objective. Steps that would make coverage worse
    than the coarse cloud's are rejected, and no point moves more than the
    repulsion bandwidth in one step. All terms are evaluated after
    mapping the inputs to a frame with unit bounding-box diagonal.
    """
    cfg = cfg or CompletionConfig()
    coarse_pc = coarse if isinstance(coarse, PointCloud) else PointCloud(coarse)
    partial_pc = partial if isinstance(partial, PointCloud) else PointCloud(partial)
    partial_pc.require_nonempty()
    coarse_pc.require_nonempty()
    X0, P = coarse_pc.points, partial_pc.points
    center = P.mean(axis=0)
    scale = 1.0 / max(float(np.linalg.norm(P.max(axis=0) - P.min(axis=0))), 1e-12)

    def to_n(a):
        return (a - center) * scale

    skel_pts = dense_skeleton_points(skeleton)
    const = 0.0
    if gt_skeleton is not None:
        gt_pts = gt_skeleton.centers if isinstance(gt_skeleton, Skeleton) else as_points(gt_skeleton)
        const = cfg.weights.lambda_skeleton * losses.skeleton_cd_loss(to_n(skeleton.centers), to_n(gt_pts)).value
    if cfg.repulsion_h is not None:
        h = cfg.repulsion_h * scale
    else:
        seg = np.linalg.norm(np.diff(skeleton.centers, axis=0), axis=1)
        area = np.sum(np.pi * (skeleton.radii[:-1] + skeleton.radii[1:]) * seg)
        h = np.sqrt(area / len(X0)) * scale
    groups = None
    if cfg.variance_mode == "section":
        groups, _ = nn.nearest(X0, skeleton.centers)
    obj = _Objective(to_n(P), to_n(skel_pts), cfg, h, const, groups)

    x = to_n(X0)
    n = len(x)
    trace = np.zeros(cfg.steps + 1, dtype=TRACE_DTYPE)
    moved = False
    t_init = cfg.step_size
    cov0 = None
    stalled_at = None
    for it in range(cfg.steps + 1):
        var_on = it >= cfg.variance_activation_step
        cd, rep, var, total, g = obj.parts(x, var_on, grad=it < cfg.steps)
        if not np.isfinite(total):
            raise Divergence(f"non-finite loss at step {it}")
        if cov0 is None:
            cov0 = cd
        trace[it] = (it, cd, rep, var, total)
        if it == cfg.steps:
            break
        if stalled_at is not None and stalled_at == var_on:
            continue
        direction = -n * g
        slope = float(np.sum(g * direction))
        # no point may move further than one repulsion bandwidth per step
        peak = float(np.sqrt(np.max(np.sum(direction * direction, axis=1))))
        t = min(t_init, h / peak) if peak > 0 else t_init
        accepted = False
        for _ in range(cfg.max_backtracks):
            cand = x + t * direction
            c_cd, _, _, c_total, _ = obj.parts(cand, var_on, grad=False)
            if c_total <= total + cfg.armijo * t * slope and c_cd <= cov0:
                accepted = True
                break
            t *= 0.5
        if accepted:
            x = cand
            moved = True
            t_init = min(2.0 * t, cfg.step_size * 16)
            stalled_at = None
        else:
            stalled_at = var_on
    out = x / scale + center if moved else X0.copy()
    if not np.all(np.isfinite(out)):
        raise Divergence("refined cloud is not finite")
    bound = 3.0 * float(skeleton.radii.max())
    far = distance_to_polyline(out, skeleton.centers) > bound
    if far.any():
        raise Divergence(f"{int(far.sum())} refined points drift beyond 3x the skeleton radius")
    return CompletionResult(PointCloud(out), coarse_pc, skeleton, trace, partial_pc)


def complete(partial, cfg: CompletionConfig = None, seed: int = 0, base_point=None,
             gt_skeleton=None) -> CompletionResult:
    """Estimate a skeleton, synthesise the coarse tube and refine it."""
    cfg = cfg or CompletionConfig()
    partial_pc = partial if isinstance(partial, PointCloud) else PointCloud(partial)
    partial_pc.require_nonempty()
    if cfg.output_count < len(partial_pc):
        raise InvalidParams(f"output_count {cfg.output_count} is below the partial size {len(partial_pc)}")
    skel = estimate_skeleton(partial_pc, cfg.slice_count, base_point=base_point)
    coarse = synthesize_coarse(skel, cfg.output_count, seed)
    return refine(coarse, partial_pc, skel, cfg, gt_skeleton)

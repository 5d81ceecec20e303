"""Surface sampling and simple cloud corruptions."""
import numpy as np

from ..errors import InvalidParams
from .branch import model_members
from .types import PointCloud, as_points


class _Envelope:
    """Rejection-sampling bound for the area density of one tube.

    The surface X(s, th) = c(s) + r(s) u(s, th) with a rotation-minimising
    frame has area element r * sqrt((1 - r k.u)^2 + r'^2) ds dth.
    """

    def __init__(self, model, grid: int = 2049):
        s = np.linspace(0.0, model.length, grid)
        r = model.taper.radius(s)
        dr = model.taper.radius_derivative(s)
        kappa = np.linalg.norm(model.curvature_vector(s), axis=1)
        self.model = model
        self.r_max = float(r.max())
        # 2% headroom covers the curvature peak between grid nodes
        self.g_max = float(np.max(np.sqrt((1 + r * kappa) ** 2 + dr ** 2))) * 1.02
        self.mass = model.length * 2 * np.pi * self.r_max * self.g_max

    def accept(self, s, theta, coin):
        """Acceptance mask and the proposed surface points."""
        m = self.model
        x, _, k, n, b = m.local_geometry(s)
        u = np.cos(theta)[:, None] * n + np.sin(theta)[:, None] * b
        r = m.taper.radius(s)
        dr = m.taper.radius_derivative(s)
        ku = np.sum(k * u, axis=1)
        dens = r * np.sqrt((1 - r * ku) ** 2 + dr ** 2)
        return coin * self.r_max * self.g_max < dens, x + r[:, None] * u


def sample_complete(model, n: int, seed: int = 0, return_params: bool = False):
    """Draw ``n`` points uniformly by surface area from a branch or tree.

    Labels hold the member index (0 = trunk for trees). With
    ``return_params`` the arc-length and angle of each point are returned as
    well.
    """
    if n < 1:
        raise InvalidParams("n must be >= 1")
    rng = np.random.default_rng(seed)
    envs = [_Envelope(m) for m in model_members(model)]
    mass = np.array([e.mass for e in envs])
    prob = mass / mass.sum()
    chunks = []
    have = 0
    while have < n:
        batch = max(64, int(1.6 * (n - have)))
        who = rng.choice(len(envs), size=batch, p=prob)
        s = rng.random(batch)
        theta = rng.random(batch) * 2 * np.pi
        coin = rng.random(batch)
        ok = np.zeros(batch, dtype=bool)
        pts = np.empty((batch, 3))
        for k, env in enumerate(envs):
            sel = who == k
            s[sel] *= env.model.length
            if sel.any():
                ok[sel], pts[sel] = env.accept(s[sel], theta[sel], coin[sel])
        chunks.append((pts[ok], who[ok], s[ok], theta[ok]))
        have += int(ok.sum())
    P, L, S, T = (np.concatenate(x)[:n] for x in zip(*chunks))
    cloud = PointCloud(P, L)
    if return_params:
        return cloud, S, T
    return cloud


def corrupt_gaps(cloud, gap_centers, gap_radius: float) -> PointCloud:
    """Remove every point within ``gap_radius`` of any gap center.

    The result may be empty.
    """
    if not gap_radius > 0:
        raise InvalidParams("gap_radius must be > 0")
    pc = cloud if isinstance(cloud, PointCloud) else PointCloud(cloud)
    centers = as_points(gap_centers)
    keep = np.ones(len(pc), dtype=bool)
    for c in centers:
        keep &= np.sum((pc.points - c) ** 2, axis=1) > gap_radius ** 2
    return pc.subset(keep)


def occlude(cloud, fraction: float, direction) -> PointCloud:
    """Half-space occlusion: drop the ``fraction`` of points lying furthest
    along ``direction``."""
    if not 0.0 <= fraction < 1.0:
        raise InvalidParams("fraction must be in [0, 1)")
    pc = cloud if isinstance(cloud, PointCloud) else PointCloud(cloud)
    d = np.asarray(direction, dtype=np.float64)
    h = pc.points @ (d / np.linalg.norm(d))
    n_drop = int(round(fraction * len(pc)))
    keep = np.ones(len(pc), dtype=bool)
    if n_drop:
        keep[np.argsort(h, kind="stable")[len(pc) - n_drop:]] = False
    return pc.subset(keep)


def jitter(cloud, sigma: float, seed: int = 0) -> PointCloud:
    """Isotropic Gaussian perturbation of every point (sensor noise)."""
    pc = cloud if isinstance(cloud, PointCloud) else PointCloud(cloud)
    if sigma < 0:
        raise InvalidParams("sigma must be >= 0")
    if sigma == 0:
        return PointCloud(pc.points.copy(), pc.labels)
    rng = np.random.default_rng(seed)
    return PointCloud(pc.points + rng.normal(0.0, sigma, pc.points.shape), pc.labels)

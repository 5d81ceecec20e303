"""Partial views by ray casting from a single viewpoint.

Each tube is approximated by a chain of cone frusta (plus end-cap disks) to
find the first hit along every ray; the hit is then polished onto the exact
swept surface with a few Newton steps, so returned points satisfy the
surface equation to rounding error.
"""
import numpy as np

from ..errors import EmptyView, InvalidParams
from .branch import model_members
from .types import PointCloud, ViewConfig

_RAY_CHUNK = 2048


class _Frusta:
    def __init__(self, members, max_seg=None):
        c0, c1, r0, r1, owner, s0, s1 = [], [], [], [], [], [], []
        caps_c, caps_n, caps_r = [], [], []
        for k, m in enumerate(members):
            seg = max_seg or max(0.25 * m.taper.min_radius, min(0.004, m.length / 32))
            cnt = int(np.clip(np.ceil(m.length / seg), 16, 2000))
            s = np.linspace(0.0, m.length, cnt + 1)
            x = m.centerline(s)
            r = m.taper.radius(s)
            c0.append(x[:-1]); c1.append(x[1:]); r0.append(r[:-1]); r1.append(r[1:])
            s0.append(s[:-1]); s1.append(s[1:])
            owner.append(np.full(cnt, k))
            t = m.tangent(np.array([0.0, m.length]))
            caps_c.append(x[[0, -1]]); caps_n.append(t); caps_r.append(r[[0, -1]])
        self.c0, self.c1 = np.vstack(c0), np.vstack(c1)
        self.r0, self.r1 = np.concatenate(r0), np.concatenate(r1)
        self.s0, self.s1 = np.concatenate(s0), np.concatenate(s1)
        self.owner = np.concatenate(owner)
        axis = self.c1 - self.c0
        self.h = np.linalg.norm(axis, axis=1)
        self.a = axis / self.h[:, None]
        self.k = (self.r1 - self.r0) / self.h
        self.sph_c = 0.5 * (self.c0 + self.c1)
        self.sph_r = 0.5 * self.h + np.maximum(self.r0, self.r1)
        self.cap_c, self.cap_n, self.cap_r = np.vstack(caps_c), np.vstack(caps_n), np.concatenate(caps_r)

    def first_hit(self, o, d, eps=1e-12):
        """Nearest tube hit per ray: (t, frustum index, blocked_by_cap)."""
        n = len(d)
        best_t = np.full(n, np.inf)
        best_f = np.full(n, -1)
        # bounding-sphere cull
        w = self.sph_c[None] - o
        proj = np.einsum("rfk,rk->rf", w, d)
        perp2 = np.einsum("rfk,rfk->rf", w, w) - proj ** 2
        ri, fi = np.nonzero(perp2 <= self.sph_r[None] ** 2)
        if ri.size:
            dd = d[ri]
            w0 = o - self.c0[fi]
            a = self.a[fi]
            k = self.k[fi]
            r0 = self.r0[fi]
            wa = np.sum(w0 * a, axis=1)
            da = np.sum(dd * a, axis=1)
            wd = np.sum(w0 * dd, axis=1)
            ww = np.sum(w0 * w0, axis=1)
            A = 1.0 - da ** 2 - (k * da) ** 2
            B = 2.0 * (wd - wa * da - k * da * (r0 + k * wa))
            C = ww - wa ** 2 - (r0 + k * wa) ** 2
            disc = B ** 2 - 4 * A * C
            ok = (disc >= 0) & (np.abs(A) > 1e-14)
            sq = np.sqrt(np.where(ok, disc, 0.0))
            safe_a = np.where(ok, A, 1.0)
            cand = []
            for t in ((-B - sq) / (2 * safe_a), (-B + sq) / (2 * safe_a)):
                q = wa + t * da
                good = ok & (t > eps) & (q >= 0) & (q <= self.h[fi]) & (r0 + k * q >= 0)
                cand.append(np.where(good, t, np.inf))
            t = np.minimum(cand[0], cand[1])
            order = np.lexsort((fi, t, ri))
            ri_o, t_o, fi_o = ri[order], t[order], fi[order]
            first = np.ones(len(ri_o), dtype=bool)
            first[1:] = ri_o[1:] != ri_o[:-1]
            best_t[ri_o[first]] = t_o[first]
            best_f[ri_o[first]] = fi_o[first]
        best_f[~np.isfinite(best_t)] = -1
        # caps occlude but are not part of the sampled surface
        cap_t = np.full(n, np.inf)
        for c, nn, r in zip(self.cap_c, self.cap_n, self.cap_r):
            dn = d @ nn
            with np.errstate(divide="ignore", invalid="ignore"):
                t = ((c - o) @ nn) / dn
                hit = o + t[:, None] * d
            inside = np.isfinite(t) & (t > eps) & (np.sum((hit - c) ** 2, axis=1) <= r * r)
            cap_t = np.where(inside & (t < cap_t), t, cap_t)
        return best_t, best_f, cap_t < best_t


def _camera(view: ViewConfig, lo, hi):
    vp = view.viewpoint
    if np.all(vp >= lo) and np.all(vp <= hi):
        raise InvalidParams("viewpoint must lie outside the model bounding box")
    fwd = 0.5 * (lo + hi) - vp
    fwd /= np.linalg.norm(fwd)
    up = view.up
    if abs(np.dot(up, fwd)) > 0.999:
        up = np.eye(3)[np.argmin(np.abs(fwd))]
    right = np.cross(fwd, up)
    right /= np.linalg.norm(right)
    cam_up = np.cross(right, fwd)
    corners = np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])]) - vp
    depth = corners @ fwd
    if np.any(depth <= 0):
        # box straddles the image plane; fall back to a wide symmetric field
        ext = np.full(4, 3.0) * np.array([-1, 1, -1, 1])
    else:
        u = (corners @ right) / depth
        v = (corners @ cam_up) / depth
        ext = np.array([u.min(), u.max(), v.min(), v.max()])
    return fwd, right, cam_up, ext


def view_rays(model, view: ViewConfig):
    """Unit ray directions of the image grid, row-major."""
    lo, hi = model_bounds(model)
    fwd, right, cam_up, ext = _camera(view, lo, hi)
    n = view.resolution
    u = ext[0] + (np.arange(n) + 0.5) / n * (ext[1] - ext[0])
    v = ext[2] + (np.arange(n) + 0.5) / n * (ext[3] - ext[2])
    uu, vv = np.meshgrid(u, v)
    d = fwd + uu.reshape(-1, 1) * right + vv.reshape(-1, 1) * cam_up
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def model_bounds(model):
    lo, hi = np.full(3, np.inf), np.full(3, -np.inf)
    for m in model_members(model):
        c = m.centerline(np.linspace(0.0, m.length, 257))
        r = m.taper.base_radius
        lo = np.minimum(lo, c.min(axis=0) - r)
        hi = np.maximum(hi, c.max(axis=0) + r)
    return lo, hi


def _polish(member, o, d, t, s_guess, iters=6):
    """Move each approximate hit onto the exact tube along its ray, then snap."""
    s = s_guess
    for _ in range(iters):
        x = o + t[:, None] * d
        s = member.project(x, s_guess=s, iters=4)
        c = member.centerline(s)
        w = x - c
        dist = np.linalg.norm(w, axis=1)
        g = dist - member.taper.radius(s)
        dg = np.sum(d * w, axis=1) / np.where(dist > 0, dist, 1.0)
        step = np.divide(g, dg, out=np.zeros_like(g), where=np.abs(dg) > 1e-3)
        t = t - step
        if not np.any(np.abs(step) > 1e-13):
            break
    x = o + t[:, None] * d
    s = member.project(x, s_guess=s, iters=4)
    c = member.centerline(s)
    w = x - c
    u = w / np.linalg.norm(w, axis=1, keepdims=True)
    return c + member.taper.radius(s)[:, None] * u, s


class RayCaster:
    """First-intersection queries against a branch or tree."""

    def __init__(self, model):
        self.model = model
        self.members = model_members(model)
        self.frusta = _Frusta(self.members)

    def _first_hits(self, origin, dirs):
        t_all = np.full(len(dirs), np.inf)
        f_all = np.full(len(dirs), -1)
        for lo in range(0, len(dirs), _RAY_CHUNK):
            t, f, capped = self.frusta.first_hit(origin, dirs[lo:lo + _RAY_CHUNK])
            f[capped] = -1
            t_all[lo:lo + _RAY_CHUNK] = t
            f_all[lo:lo + _RAY_CHUNK] = f
        owner = np.where(f_all >= 0, self.frusta.owner[np.maximum(f_all, 0)], -1)
        return t_all, f_all, owner

    def _polish_hits(self, origin, dirs, t_all, f_all, owner):
        pts = np.full((len(dirs), 3), np.nan)
        for k, m in enumerate(self.members):
            sel = np.flatnonzero(owner == k)
            if sel.size == 0:
                continue
            fr = f_all[sel]
            o = np.broadcast_to(origin, (sel.size, 3))
            x = o + t_all[sel, None] * dirs[sel]
            q = np.sum((x - self.frusta.c0[fr]) * self.frusta.a[fr], axis=1) / self.frusta.h[fr]
            s0 = self.frusta.s0[fr] + np.clip(q, 0, 1) * (self.frusta.s1[fr] - self.frusta.s0[fr])
            pts[sel], _ = _polish(m, o, dirs[sel], t_all[sel], s0)
        return pts

    def cast(self, origin, dirs):
        """Return (distance, member index or -1, exact surface point) per ray.

        Rays that miss, or whose first hit is an end cap, get member -1.
        """
        origin = np.asarray(origin, dtype=np.float64).reshape(3)
        dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
        t, f, owner = self._first_hits(origin, dirs)
        pts = self._polish_hits(origin, dirs, t, f, owner)
        dist = np.where(owner >= 0, np.sum((pts - origin) * dirs, axis=1), np.inf)
        return dist, owner, pts


def render_partial(model, view: ViewConfig, seed: int = 0) -> PointCloud:
    """Depth-scan style partial cloud of exactly ``view.target_count`` points.

    Rays through a ``resolution x resolution`` grid covering the model's
    bounding box keep their first tube intersection; the hits are
    subsampled (or padded by repetition) to the target count.
    """
    caster = RayCaster(model)
    dirs = view_rays(model, view)
    t, f, owner = caster._first_hits(view.viewpoint, dirs)
    hit = np.flatnonzero(owner >= 0)
    if hit.size == 0:
        raise EmptyView("no ray hits the model")
    rng = np.random.default_rng(seed)
    n = view.target_count
    if hit.size >= n:
        pick = np.sort(rng.choice(hit.size, size=n, replace=False))
    else:
        pick = np.concatenate([np.arange(hit.size), rng.choice(hit.size, size=n - hit.size, replace=True)])
    sel = hit[pick]
    pts = caster._polish_hits(view.viewpoint, dirs[sel], t[sel], f[sel], owner[sel])
    return PointCloud(pts, owner[sel])

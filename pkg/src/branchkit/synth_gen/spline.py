"""Centripetal Catmull-Rom curve with an exact arc-length parameterisation."""
import numpy as np

from ..errors import DegenerateSkeleton

_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)
_GL_X = 0.5 * (_GL_X + 1.0)
_GL_W = 0.5 * _GL_W


class CatmullRomSpline:
    """Interpolating cubic through ``points``; global parameter t in [0, 1].

    Point ``i`` is reached at ``t = i / (n - 1)``. End tangents use mirrored
    phantom points, so two input points give a straight segment.
    """

    def __init__(self, points, alpha: float = 0.5, subdiv: int = 64):
        pts = np.array(points, dtype=np.float64).reshape(-1, 3)
        if len(pts) < 2:
            raise DegenerateSkeleton("spline needs at least 2 points")
        if not np.all(np.isfinite(pts)):
            raise DegenerateSkeleton("spline points must be finite")
        if np.any(np.linalg.norm(np.diff(pts, axis=0), axis=1) == 0):
            raise DegenerateSkeleton("consecutive spline points coincide")
        self.points = pts
        self.n_seg = len(pts) - 1
        ext = np.vstack([2 * pts[0] - pts[1], pts, 2 * pts[-1] - pts[-2]])
        p0, p1, p2, p3 = ext[:-3], ext[1:-2], ext[2:-1], ext[3:]
        t01 = np.linalg.norm(p1 - p0, axis=1) ** alpha
        t12 = np.linalg.norm(p2 - p1, axis=1) ** alpha
        t23 = np.linalg.norm(p3 - p2, axis=1) ** alpha
        m1 = p2 - p1 + t12[:, None] * ((p1 - p0) / t01[:, None] - (p2 - p0) / (t01 + t12)[:, None])
        m2 = p2 - p1 + t12[:, None] * ((p3 - p2) / t23[:, None] - (p3 - p1) / (t12 + t23)[:, None])
        # p(u) = a u^3 + b u^2 + c u + d on each segment, u in [0, 1]
        self._a = 2 * (p1 - p2) + m1 + m2
        self._b = -3 * (p1 - p2) - 2 * m1 - m2
        self._c = m1
        self._d = p1.copy()
        self._build_length_table(subdiv)

    # -- local evaluation -------------------------------------------------
    def _split(self, t):
        x = np.clip(np.asarray(t, dtype=np.float64), 0.0, 1.0) * self.n_seg
        seg = np.minimum(x.astype(np.int64), self.n_seg - 1)
        return seg, x - seg

    def _eval_local(self, seg, u):
        u = np.asarray(u)[..., None]
        return ((self._a[seg] * u + self._b[seg]) * u + self._c[seg]) * u + self._d[seg]

    def _deriv_local(self, seg, u):
        u = np.asarray(u)[..., None]
        return (3 * self._a[seg] * u + 2 * self._b[seg]) * u + self._c[seg]

    def _deriv2_local(self, seg, u):
        u = np.asarray(u)[..., None]
        return 6 * self._a[seg] * u + 2 * self._b[seg]

    def _speed_local(self, seg, u):
        return np.linalg.norm(self._deriv_local(seg, u), axis=-1)

    def _len_local(self, seg, u0, u1):
        """Arc-length between local parameters u0 <= u1 of the same segment."""
        u0 = np.asarray(u0, dtype=np.float64)
        u1 = np.asarray(u1, dtype=np.float64)
        h = u1 - u0
        nodes = (u0[..., None] + h[..., None] * _GL_X)[..., None]
        a = 3 * self._a[seg][..., None, :]
        b = 2 * self._b[seg][..., None, :]
        c = self._c[seg][..., None, :]
        sp = np.linalg.norm((a * nodes + b) * nodes + c, axis=-1)
        return (sp @ _GL_W) * h

    # -- global evaluation --------------------------------------------------
    def __call__(self, t):
        seg, u = self._split(t)
        return self._eval_local(seg, u)

    def derivative(self, t):
        seg, u = self._split(t)
        return self._deriv_local(seg, u) * self.n_seg

    def second_derivative(self, t):
        seg, u = self._split(t)
        return self._deriv2_local(seg, u) * self.n_seg ** 2

    def _build_length_table(self, subdiv):
        self._subdiv = subdiv
        u = np.linspace(0.0, 1.0, subdiv + 1)
        seg = np.repeat(np.arange(self.n_seg), subdiv)
        u0 = np.tile(u[:-1], self.n_seg)
        u1 = np.tile(u[1:], self.n_seg)
        pieces = self._len_local(seg, u0, u1)
        self._cum = np.concatenate([[0.0], np.cumsum(pieces)])
        self._tab_seg = np.append(seg, self.n_seg - 1)
        self._tab_u = np.append(u0, 1.0)

    @property
    def length(self) -> float:
        return float(self._cum[-1])

    def length_at(self, t):
        seg, u = self._split(t)
        k = np.minimum((u * self._subdiv).astype(np.int64), self._subdiv - 1)
        row = seg * self._subdiv + k
        return self._cum[row] + self._len_local(seg, self._tab_u[row], u)

    def param_at_length(self, s):
        """Invert ``length_at``: global t for arc-length(s) in [0, length]."""
        s = np.clip(np.asarray(s, dtype=np.float64), 0.0, self._cum[-1])
        row = np.clip(np.searchsorted(self._cum, s, side="right") - 1, 0, len(self._cum) - 2)
        seg = self._tab_seg[row]
        lo = self._tab_u[row]
        hi = lo + 1.0 / self._subdiv
        target = s - self._cum[row]
        piece = self._cum[row + 1] - self._cum[row]
        u = lo + (hi - lo) * np.divide(target, piece, out=np.zeros_like(target), where=piece > 0)
        for _ in range(8):
            f = self._len_local(seg, lo, u) - target
            sp = self._speed_local(seg, u)
            step = np.divide(f, sp, out=np.zeros_like(f), where=sp > 0)
            u = np.clip(u - step, lo, hi)
            if not np.any(np.abs(step) > 1e-15):
                break
        return (seg + u) / self.n_seg

"""Swept-tube branch models and tree assemblies."""
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from ..errors import DegenerateSkeleton, InvalidParams, OutOfRange
from .spline import CatmullRomSpline
from .types import SkeletalSphere, Skeleton, TaperProfile

DEFAULT_TAPER_ANGLE = -0.5
DEFAULT_MIN_RADIUS = 0.0005


def _unit(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _any_perpendicular(t):
    helper = np.eye(3)[np.argmin(np.abs(t))]
    n = helper - np.dot(helper, t) * t
    return n / np.linalg.norm(n)


class BranchModel:
    """Tube swept along a spline centerline with a tapered radius.

    Positions along the branch are addressed by arc-length ``s`` in
    ``[0, length]``. The cross-section frame is rotation-minimising, computed
    by double reflection on a dense table and carried to arbitrary ``s`` with
    one further reflection step.
    """

    def __init__(self, spline: CatmullRomSpline, taper: TaperProfile, id=0, frame_samples: int = 1024):
        self.spline = spline
        self.taper = taper
        self.id = id
        self.length = spline.length
        self._build_frames(frame_samples)

    def __repr__(self):
        return f"BranchModel(id={self.id!r}, length={self.length:.4g}, base_radius={self.taper.base_radius:.4g})"

    # -- centerline ---------------------------------------------------------
    def _check_s(self, s):
        s = np.asarray(s, dtype=np.float64)
        tol = 1e-12 * max(1.0, self.length)
        if np.any(s < -tol) or np.any(s > self.length + tol):
            raise OutOfRange(f"arc-length outside [0, {self.length}]")
        return np.clip(s, 0.0, self.length)

    def _eval(self, s):
        """Centerline point, unit tangent and dT/ds at checked arc-lengths."""
        t = self.spline.param_at_length(s)
        d1 = self.spline.derivative(t)
        d2 = self.spline.second_derivative(t)
        sp2 = np.sum(d1 * d1, axis=-1, keepdims=True)
        k = (d2 - np.sum(d2 * d1, axis=-1, keepdims=True) * d1 / sp2) / sp2
        return self.spline(t), d1 / np.sqrt(sp2), k

    def centerline(self, s):
        return self.spline(self.spline.param_at_length(self._check_s(s)))

    def tangent(self, s):
        return _unit(self.spline.derivative(self.spline.param_at_length(self._check_s(s))))

    def curvature_vector(self, s):
        """dT/ds."""
        return self._eval(self._check_s(s))[2]

    def radius(self, s):
        return self.taper.radius(self._check_s(s))

    # -- frames -------------------------------------------------------------
    @staticmethod
    def _reflect(x0, t0, r0, x1, t1):
        v1 = x1 - x0
        c1 = np.sum(v1 * v1, axis=-1, keepdims=True)
        safe = np.where(c1 > 0, c1, 1.0)
        rl = r0 - np.where(c1 > 0, 2.0 / safe, 0.0) * np.sum(v1 * r0, axis=-1, keepdims=True) * v1
        tl = t0 - np.where(c1 > 0, 2.0 / safe, 0.0) * np.sum(v1 * t0, axis=-1, keepdims=True) * v1
        v2 = t1 - tl
        c2 = np.sum(v2 * v2, axis=-1, keepdims=True)
        safe = np.where(c2 > 0, c2, 1.0)
        r1 = rl - np.where(c2 > 0, 2.0 / safe, 0.0) * np.sum(v2 * rl, axis=-1, keepdims=True) * v2
        r1 = r1 - np.sum(r1 * t1, axis=-1, keepdims=True) * t1
        return _unit(r1)

    def _build_frames(self, m):
        s = np.linspace(0.0, self.length, m + 1)
        x = self.centerline(s)
        t = self.tangent(s)
        r = np.empty_like(x)
        r[0] = _any_perpendicular(t[0])
        for i in range(m):
            r[i + 1] = self._reflect(x[i], t[i], r[i], x[i + 1], t[i + 1])
        self._fs, self._fx, self._ft, self._fr = s, x, t, r

    def _frame_at(self, s, x, t):
        i = np.clip(np.searchsorted(self._fs, s, side="right") - 1, 0, len(self._fs) - 2)
        n = self._reflect(self._fx[i], self._ft[i], self._fr[i], x, t)
        return n, np.cross(t, n)

    def frame(self, s):
        """(normal, binormal) unit vectors at arc-length ``s``."""
        s = self._check_s(s)
        x, t, _ = self._eval(s)
        return self._frame_at(s, x, t)

    def local_geometry(self, s):
        """(centerline, tangent, dT/ds, normal, binormal) at arc-length ``s``."""
        s = self._check_s(s)
        x, t, k = self._eval(s)
        n, b = self._frame_at(s, x, t)
        return x, t, k, n, b

    def surface(self, s, theta):
        """Tube surface point; vectorised over matching ``s`` and ``theta``."""
        s = self._check_s(s)
        theta = np.asarray(theta, dtype=np.float64)
        x, t, _ = self._eval(s)
        n, b = self._frame_at(s, x, t)
        r = self.taper.radius(s)[..., None]
        return x + r * (np.cos(theta)[..., None] * n + np.sin(theta)[..., None] * b)

    def skeleton(self, n: int = 100) -> Skeleton:
        s = np.linspace(0.0, self.length, n)
        return Skeleton(self.centerline(s), self.taper.radius(s))

    def project(self, p, s_guess=None, iters: int = 20):
        """Arc-length of the foot point: (p - c(s)) . T(s) = 0, by Newton from ``s_guess``."""
        p = np.asarray(p, dtype=np.float64).reshape(-1, 3)
        if s_guess is None:
            dense = np.linspace(0.0, self.length, 513)
            c = self.centerline(dense)
            d2 = np.sum((p[:, None, :] - c[None]) ** 2, axis=-1)
            s = dense[np.argmin(d2, axis=1)]
        else:
            s = np.array(s_guess, dtype=np.float64).reshape(-1)
        for _ in range(iters):
            c, t, k = self._eval(s)
            w = p - c
            f = np.sum(w * t, axis=-1)
            df = -1.0 + np.sum(w * k, axis=-1)
            step = np.divide(f, df, out=np.zeros_like(f), where=np.abs(df) > 1e-12)
            s = np.clip(s - step, 0.0, self.length)
            if not np.any(np.abs(step) > 1e-15 * max(self.length, 1.0)):
                break
        return s


def fit_spline(spheres: Sequence[SkeletalSphere], taper_angle: float = DEFAULT_TAPER_ANGLE,
               min_radius: float = DEFAULT_MIN_RADIUS, id=0) -> BranchModel:
    """Branch model through the sphere centers, tapered from the first radius."""
    if len(spheres) < 2:
        raise DegenerateSkeleton("need at least 2 skeletal spheres")
    centers = np.array([s.center for s in spheres], dtype=np.float64)
    if np.any(np.linalg.norm(np.diff(centers, axis=0), axis=1) == 0):
        raise DegenerateSkeleton("duplicate consecutive sphere centers")
    base = float(spheres[0].radius)
    taper = TaperProfile(base, taper_angle, min(min_radius, base))
    return BranchModel(CatmullRomSpline(centers), taper, id=id)


def tube_surface(model: BranchModel, s: float, theta: float) -> np.ndarray:
    return model.surface(s, theta)


def resample_skeleton(model: BranchModel, n: int = 100) -> np.ndarray:
    """``n`` centerline points at equal arc-length spacing, base first."""
    if n < 2:
        raise InvalidParams("need n >= 2")
    return model.centerline(np.linspace(0.0, model.length, n))


@dataclass
class TreeModel:
    """A trunk plus lateral branches attached along it.

    ``branches`` holds ``(model, attach)`` pairs where ``attach`` is the
    attachment position as a fraction of trunk arc-length.
    """

    trunk: BranchModel
    branches: List[Tuple[BranchModel, float]] = field(default_factory=list)
    provenance: dict = field(default_factory=lambda: {"kind": "FromSkeleton"})

    def __post_init__(self):
        for model, attach in self.branches:
            if not 0.0 <= attach <= 1.0:
                raise InvalidParams(f"attachment {attach} outside [0, 1]")

    @property
    def members(self) -> List[BranchModel]:
        return [self.trunk] + [m for m, _ in self.branches]

    def branch(self, branch_id) -> BranchModel:
        for m, _ in self.branches:
            if m.id == branch_id:
                return m
        raise KeyError(branch_id)

    def attachment_point(self, i: int) -> np.ndarray:
        _, a = self.branches[i]
        return self.trunk.centerline(a * self.trunk.length)

    def base_offset_error(self, i: int) -> float:
        """|distance(branch base, trunk centerline at attachment) - trunk radius|."""
        model, a = self.branches[i]
        s = a * self.trunk.length
        d = np.linalg.norm(model.centerline(0.0) - self.trunk.centerline(s))
        return float(abs(d - self.trunk.radius(s)))

    def bounds(self):
        lo, hi = np.full(3, np.inf), np.full(3, -np.inf)
        for m in self.members:
            c = m.centerline(np.linspace(0, m.length, 200))
            r = m.taper.base_radius
            lo = np.minimum(lo, c.min(axis=0) - r)
            hi = np.maximum(hi, c.max(axis=0) + r)
        return lo, hi


def model_members(model) -> List[BranchModel]:
    if isinstance(model, TreeModel):
        return model.members
    return [model]

"""Core value types shared by generation, losses and characterization."""
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..errors import DegenerateSkeleton, EmptyCloud, InvalidParams


def as_points(obj) -> np.ndarray:
    """Return an (n, 3) float64 array from a PointCloud or array-like."""
    if isinstance(obj, PointCloud):
        return obj.points
    arr = np.asarray(obj, dtype=np.float64)
    if arr.size == 0:
        return arr.reshape(0, 3)
    return arr.reshape(-1, 3)


@dataclass(frozen=True)
class SkeletalSphere:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        c = np.asarray(self.center, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(c)):
            raise InvalidParams("sphere center must be finite")
        if not (np.isfinite(self.radius) and self.radius > 0):
            raise InvalidParams(f"sphere radius must be > 0, got {self.radius}")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", float(self.radius))


class Skeleton:
    """Ordered skeletal spheres from branch base to tip.

    Stored as parallel ``centers`` (n, 3) and ``radii`` (n,) arrays. The
    polyline through the centers is the skeleton's geometry; radii are
    interpolated linearly in arc-length.
    """

    def __init__(self, centers, radii):
        centers = np.array(centers, dtype=np.float64).reshape(-1, 3)
        radii = np.array(radii, dtype=np.float64).reshape(-1)
        if len(centers) < 2:
            raise DegenerateSkeleton("skeleton needs at least 2 spheres")
        if len(radii) != len(centers):
            raise InvalidParams("centers and radii length differ")
        if not (np.all(np.isfinite(centers)) and np.all(np.isfinite(radii))):
            raise InvalidParams("skeleton contains non-finite values")
        if np.any(radii <= 0):
            raise InvalidParams("skeleton radii must be > 0")
        gaps = np.linalg.norm(np.diff(centers, axis=0), axis=1)
        if np.any(gaps <= 0):
            raise DegenerateSkeleton("consecutive skeleton centers coincide")
        self.centers = centers
        self.radii = radii
        self._cum = np.concatenate([[0.0], np.cumsum(gaps)])

    @classmethod
    def from_spheres(cls, spheres: Sequence[SkeletalSphere]) -> "Skeleton":
        if len(spheres) < 2:
            raise DegenerateSkeleton("skeleton needs at least 2 spheres")
        return cls([s.center for s in spheres], [s.radius for s in spheres])

    @property
    def spheres(self):
        return [SkeletalSphere(c, r) for c, r in zip(self.centers, self.radii)]

    def __len__(self):
        return len(self.centers)

    @property
    def arc_lengths(self) -> np.ndarray:
        return self._cum.copy()

    @property
    def length(self) -> float:
        return float(self._cum[-1])

    def _locate(self, s):
        s = np.clip(np.asarray(s, dtype=np.float64), 0.0, self._cum[-1])
        i = np.clip(np.searchsorted(self._cum, s, side="right") - 1, 0, len(self._cum) - 2)
        w = (s - self._cum[i]) / (self._cum[i + 1] - self._cum[i])
        return i, w

    def point_at(self, s):
        i, w = self._locate(s)
        w = np.asarray(w)[..., None]
        return self.centers[i] * (1 - w) + self.centers[i + 1] * w

    def radius_at(self, s):
        i, w = self._locate(s)
        return self.radii[i] * (1 - w) + self.radii[i + 1] * w

    def tangent_at(self, s):
        i, _ = self._locate(s)
        d = self.centers[i + 1] - self.centers[i]
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def resample(self, n: int) -> "Skeleton":
        """Skeleton with ``n`` spheres evenly spaced along the polyline."""
        s = np.linspace(0.0, self.length, n)
        return Skeleton(self.point_at(s), self.radius_at(s))

    def __repr__(self):
        return f"Skeleton(n={len(self)}, length={self.length:.4g})"


@dataclass(frozen=True)
class TaperProfile:
    """Linear radius change along arc-length, clamped from below.

    ``taper_angle`` is in degrees; negative values shrink the radius.
    """

    base_radius: float
    taper_angle: float = -0.5
    min_radius: float = 0.0005

    def __post_init__(self):
        if not self.base_radius > 0:
            raise InvalidParams("base_radius must be > 0")
        if self.min_radius < 0 or self.min_radius > self.base_radius:
            raise InvalidParams("need 0 <= min_radius <= base_radius")

    @property
    def slope(self) -> float:
        return float(np.tan(np.radians(self.taper_angle)))

    def radius(self, s):
        return np.maximum(self.min_radius, self.base_radius + np.asarray(s, dtype=np.float64) * self.slope)

    def radius_derivative(self, s):
        """d r / d s; zero where the floor is active."""
        raw = self.base_radius + np.asarray(s, dtype=np.float64) * self.slope
        return np.where(raw > self.min_radius, self.slope, 0.0)


@dataclass
class PointCloud:
    points: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.points = as_points(self.points)
        if not np.all(np.isfinite(self.points)):
            raise InvalidParams("point cloud contains non-finite coordinates")
        if self.labels is not None:
            self.labels = np.asarray(self.labels)
            if self.labels.shape != (len(self.points),):
                raise InvalidParams("labels must align with points")

    def __len__(self):
        return len(self.points)

    def require_nonempty(self):
        if len(self.points) == 0:
            raise EmptyCloud("point cloud is empty")
        return self

    def subset(self, mask) -> "PointCloud":
        return PointCloud(self.points[mask], None if self.labels is None else self.labels[mask])


@dataclass(frozen=True)
class ViewConfig:
    viewpoint: np.ndarray
    target_count: int = 2048
    resolution: int = 256
    up: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))

    def __post_init__(self):
        vp = np.asarray(self.viewpoint, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(vp)):
            raise InvalidParams("viewpoint must be finite")
        if self.target_count < 1 or self.resolution < 1:
            raise InvalidParams("target_count and resolution must be positive")
        object.__setattr__(self, "viewpoint", vp)
        object.__setattr__(self, "up", np.asarray(self.up, dtype=np.float64).reshape(3))

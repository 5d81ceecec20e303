"""Tree assembly: skeleton-driven trees and a recursive tree-unit generator."""
from dataclasses import asdict, dataclass
from typing import Sequence, Tuple

import numpy as np

from ..errors import InvalidParams
from .branch import DEFAULT_MIN_RADIUS, DEFAULT_TAPER_ANGLE, BranchModel, TreeModel, fit_spline
from .types import SkeletalSphere

TRUNK_AXIS = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class TreeUnitParams:
    depth: int = 3
    branches_per_unit: int = 2
    radius_decay: float = 0.5
    branch_angle_range: Tuple[float, float] = (40.0, 75.0)
    unit_length_range: Tuple[float, float] = (0.35, 0.5)
    trunk_radius: float = 0.035
    lateral_length_range: Tuple[float, float] = (0.3, 0.6)
    taper_angle: float = DEFAULT_TAPER_ANGLE
    min_radius: float = DEFAULT_MIN_RADIUS

    def validate(self):
        if self.depth < 1:
            raise InvalidParams("depth must be >= 1")
        if self.branches_per_unit < 0:
            raise InvalidParams("branches_per_unit must be >= 0")
        if not 0.0 < self.radius_decay <= 1.0:
            raise InvalidParams("radius_decay must be in (0, 1]")
        lo, hi = self.branch_angle_range
        if not 0.0 < lo <= hi < 90.0:
            raise InvalidParams("branch_angle_range must lie within (0, 90) degrees")
        for name in ("unit_length_range", "lateral_length_range"):
            a, b = getattr(self, name)
            if not 0.0 < a <= b:
                raise InvalidParams(f"{name} must be positive and ordered")
        if self.taper_angle > 0:
            raise InvalidParams("taper_angle must be <= 0 so radii never grow toward tips")
        if not self.trunk_radius > 0:
            raise InvalidParams("trunk_radius must be > 0")


def _lateral(trunk: BranchModel, s_attach, azimuth, elevation, length, radius, taper, min_r, droop, bid):
    x, t, _, n, b = trunk.local_geometry(np.array([s_attach]))
    x, t, n, b = x[0], t[0], n[0], b[0]
    u = np.cos(azimuth) * n + np.sin(azimuth) * b
    base = x + trunk.taper.radius(s_attach) * u
    d = np.cos(elevation) * t + np.sin(elevation) * u
    pts = [base]
    steps = 4
    for i in range(1, steps + 1):
        f = i / steps
        # gravity bends the far part of the branch downwards
        p = base + f * length * d - np.array([0.0, 0.0, droop * (f * length) ** 2])
        pts.append(p)
    spheres = [SkeletalSphere(p, radius) for p in pts]
    return fit_spline(spheres, taper_angle=taper, min_radius=min(min_r, radius), id=bid)


def generate_tree_unit(params: TreeUnitParams = TreeUnitParams(), seed: int = 0) -> TreeModel:
    """Tree built from repeated units: each unit extends the central leader and
    spawns ``branches_per_unit`` lateral branches along its span."""
    params.validate()
    rng = np.random.default_rng(seed)
    nodes = [np.zeros(3)]

    def grow(unit, node, heading):
        if unit == params.depth:
            return
        length = rng.uniform(*params.unit_length_range)
        wobble = rng.normal(0.0, 0.05, 3)
        wobble[2] = 0.0
        heading = heading + wobble
        heading /= np.linalg.norm(heading)
        nxt = node + length * heading
        nodes.append(nxt)
        grow(unit + 1, nxt, heading)

    grow(0, nodes[0], TRUNK_AXIS.copy())
    trunk = fit_spline([SkeletalSphere(p, params.trunk_radius) for p in nodes],
                       taper_angle=params.taper_angle, min_radius=params.min_radius, id="trunk")
    node_s = trunk.spline.length_at(np.linspace(0.0, 1.0, len(nodes)))
    branches = []
    golden = np.radians(137.5)
    count = 0
    for unit in range(params.depth):
        s_lo, s_hi = node_s[unit], node_s[unit + 1]
        for j in range(params.branches_per_unit):
            frac = (j + 1) / (params.branches_per_unit + 1)
            s_a = s_lo + (0.15 + 0.7 * frac) * (s_hi - s_lo) + rng.uniform(-0.03, 0.03) * (s_hi - s_lo)
            az = count * golden + rng.uniform(-0.2, 0.2)
            el = np.radians(rng.uniform(*params.branch_angle_range))
            ln = rng.uniform(*params.lateral_length_range)
            rad = float(trunk.radius(s_a)) * params.radius_decay
            bid = f"b{count:03d}"
            model = _lateral(trunk, s_a, az, el, ln, rad, params.taper_angle, params.min_radius,
                             droop=rng.uniform(0.0, 0.3), bid=bid)
            branches.append((model, float(s_a / trunk.length)))
            count += 1
    return TreeModel(trunk, branches, {"kind": "TreeUnit", "seed": int(seed), "params": asdict(params)})


@dataclass(frozen=True)
class BranchSkeletonParams:
    """Ranges for randomly drawn skeletal-sphere sequences of single branches."""

    length_range: Tuple[float, float] = (0.3, 0.6)
    base_radius_range: Tuple[float, float] = (0.008, 0.02)
    angle_range: Tuple[float, float] = (35.0, 75.0)
    droop_range: Tuple[float, float] = (0.0, 0.6)
    n_spheres: int = 8


def random_branch_skeleton(rng, params: BranchSkeletonParams = BranchSkeletonParams(),
                           base=(0.0, 0.0, 0.0), trunk_axis=TRUNK_AXIS):
    """Skeletal spheres of a plausible lateral branch leaving ``base``.

    The branch leaves at an angle drawn from ``angle_range`` to the trunk axis
    and bends downwards under a quadratic droop. Radii shrink linearly
    toward the tip, with the jitter typical of skeleton extraction.
    """
    base = np.asarray(base, dtype=np.float64)
    axis = np.asarray(trunk_axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    length = rng.uniform(*params.length_range)
    r0 = rng.uniform(*params.base_radius_range)
    el = np.radians(rng.uniform(*params.angle_range))
    az = rng.uniform(0.0, 2 * np.pi)
    droop = rng.uniform(*params.droop_range)
    helper = np.eye(3)[np.argmin(np.abs(axis))]
    e1 = np.cross(axis, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(axis, e1)
    radial = np.cos(az) * e1 + np.sin(az) * e2
    d = np.cos(el) * axis + np.sin(el) * radial
    spheres = []
    for i in range(params.n_spheres):
        f = i / (params.n_spheres - 1)
        p = base + f * length * d - droop * (f * length) ** 2 * axis
        r = r0 * (1.0 - 0.5 * f) * (1.0 + (0.1 * rng.standard_normal() if i else 0.0))
        spheres.append(SkeletalSphere(p, max(r, 1e-4)))
    return spheres


def tree_from_skeletons(trunk_spheres: Sequence[SkeletalSphere],
                        branch_specs: Sequence[Tuple[Sequence[SkeletalSphere], float]],
                        taper_angle: float = DEFAULT_TAPER_ANGLE,
                        min_radius: float = DEFAULT_MIN_RADIUS) -> TreeModel:
    """Hierarchical assembly: fit the trunk, then each branch from its spheres.

    Each branch's spheres are translated together so the first one lies on
    the trunk surface at its attachment fraction; moving the first sphere
    alone would kink the branch at its base.
    """
    trunk = fit_spline(trunk_spheres, taper_angle, min_radius, id="trunk")
    branches = []
    for i, (spheres, attach) in enumerate(branch_specs):
        s_a = attach * trunk.length
        x = trunk.centerline(s_a)
        d = spheres[1].center - x
        t = trunk.tangent(s_a)
        radial = d - np.dot(d, t) * t
        if np.linalg.norm(radial) == 0:
            raise InvalidParams("branch must leave the trunk sideways")
        radial /= np.linalg.norm(radial)
        base = x + float(trunk.radius(s_a)) * radial
        shift = base - spheres[0].center
        moved = [SkeletalSphere(sp.center + shift, sp.radius) for sp in spheres]
        branches.append((fit_spline(moved, taper_angle, min_radius, id=f"b{i:03d}"), float(attach)))
    return TreeModel(trunk, branches, {"kind": "FromSkeleton"})


def random_fb_tree(seed: int, n_branches: int = 6, trunk_height: float = 1.6, trunk_radius: float = 0.04,
                   branch_params: BranchSkeletonParams = BranchSkeletonParams()) -> TreeModel:
    """Skeleton-driven tree with ``n_branches`` randomly drawn laterals."""
    rng = np.random.default_rng(seed)
    zs = np.linspace(0.0, trunk_height, 6)
    trunk_pts = np.c_[rng.normal(0, 0.02, 6), rng.normal(0, 0.02, 6), zs]
    trunk_pts[0, :2] = 0.0
    trunk_spheres = [SkeletalSphere(p, trunk_radius) for p in trunk_pts]
    trunk = fit_spline(trunk_spheres)
    specs = []
    attach = np.sort(rng.uniform(0.2, 0.9, n_branches))
    for a in attach:
        x = trunk.centerline(a * trunk.length)
        spheres = random_branch_skeleton(rng, branch_params, base=x, trunk_axis=trunk.tangent(a * trunk.length))
        specs.append((spheres, float(a)))
    tree = tree_from_skeletons(trunk_spheres, specs)
    tree.provenance = {"kind": "FromSkeleton", "seed": int(seed)}
    return tree

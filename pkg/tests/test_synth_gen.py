import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from branchkit.errors import DegenerateSkeleton, EmptyView, InvalidParams, OutOfRange
from branchkit.synth_gen import (PointCloud, SkeletalSphere, Skeleton, TaperProfile,
                                 TreeUnitParams, ViewConfig, branch_truth, corrupt_gaps, fit_spline,
                                 generate_tree_unit, jitter, occlude, random_branch_skeleton, random_fb_tree,
                                 render_partial, resample_skeleton, sample_complete, tube_surface)
from branchkit.synth_gen.render import RayCaster, model_bounds

from conftest import arc_branch, straight_branch


def numeric_arc_length(spline, t0, t1):
    f = lambda t: np.linalg.norm(spline.derivative(np.array([t]))[0])
    knots = np.linspace(0, 1, spline.n_seg + 1)
    inner = [k for k in knots if t0 < k < t1]
    edges = [t0] + inner + [t1]
    return sum(quad(f, a, b, epsabs=1e-13, epsrel=1e-13)[0] for a, b in zip(edges[:-1], edges[1:]))


# -- spline and model ---------------------------------------------------------------
def test_two_spheres_give_straight_unit_segment():
    m = straight_branch(0.01, 1.0)
    assert m.length == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(m.centerline(0.5), [0, 0, 0.5], atol=1e-12)


def test_default_taper_angle():
    m = fit_spline([SkeletalSphere([0, 0, 0], 0.02), SkeletalSphere([0, 0, 1], 0.02)])
    assert m.taper.taper_angle == -0.5
    assert m.taper.base_radius == 0.02


def test_collinear_spheres_stay_on_segment():
    m = fit_spline([SkeletalSphere([0, 0, z], 0.01) for z in (0.0, 0.5, 1.0)])
    p = m.spline(np.linspace(0, 1, 1000))
    assert np.max(np.hypot(p[:, 0], p[:, 1])) < 1e-9
    assert np.all(np.diff(p[:, 2]) > 0)


def test_spline_interpolates_all_centers(rng):
    sp = random_branch_skeleton(rng)
    m = fit_spline(sp)
    t = np.linspace(0, 1, len(sp))
    np.testing.assert_allclose(m.spline(t), [s.center for s in sp], atol=1e-12)


@pytest.mark.parametrize("spheres", [
    [SkeletalSphere([0, 0, 0], 0.01)],
    [SkeletalSphere([0, 0, 0], 0.01), SkeletalSphere([0, 0, 0], 0.01)],
])
def test_degenerate_skeletons_rejected(spheres):
    with pytest.raises(DegenerateSkeleton):
        fit_spline(spheres)


def test_arc_length_matches_quadrature(rng):
    sp = random_branch_skeleton(rng)
    m = fit_spline(sp)
    for t in (0.13, 0.5, 0.91, 1.0):
        assert m.spline.length_at(np.array(t)) == pytest.approx(numeric_arc_length(m.spline, 0.0, t), rel=1e-9)


def test_tube_surface_on_straight_cylinder():
    m = straight_branch(0.01, 1.0)
    p = tube_surface(m, 0.5, 0.0)
    assert np.linalg.norm(p - [0, 0, 0.5]) == pytest.approx(0.010, abs=1e-12)


def test_taper_formula_and_floor():
    m = straight_branch(0.02, 1.0, taper_angle=-0.5)
    assert float(m.radius(1.0)) == pytest.approx(0.02 + np.tan(np.radians(-0.5)), abs=1e-12)
    assert float(m.radius(1.0)) == pytest.approx(0.011273, abs=1e-6)
    tp = TaperProfile(0.005, -0.5, 0.001)
    assert float(tp.radius(1.0)) == 0.001


def test_tube_surface_out_of_range():
    m = straight_branch()
    with pytest.raises(OutOfRange):
        tube_surface(m, 1.5, 0.0)
    with pytest.raises(OutOfRange):
        tube_surface(m, -0.1, 0.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6), st.floats(0, 1), st.floats(0, 2 * np.pi))
def test_surface_distance_equals_radius(seed, u, theta):
    m = fit_spline(random_branch_skeleton(np.random.default_rng(seed)))
    s = u * m.length
    p = m.surface(s, theta)
    assert abs(np.linalg.norm(p - m.centerline(s)) - float(m.radius(s))) < 1e-9
    # the offset is normal to the centerline
    assert abs(np.dot(p - m.centerline(s), m.tangent(s))) < 1e-9


def test_frame_is_continuous(rng):
    m = fit_spline(random_branch_skeleton(rng))
    s = np.linspace(0, m.length, 2000)
    n, b = m.frame(s)
    assert np.max(np.linalg.norm(np.diff(n, axis=0), axis=1)) < 0.05
    np.testing.assert_allclose(np.sum(n * b, axis=1), 0, atol=1e-12)


# -- skeleton resampling ---------------------------------------------------------
def test_resample_straight_segment():
    m = straight_branch(0.01, 1.0)
    p = resample_skeleton(m)
    assert len(p) == 100
    np.testing.assert_allclose(p[:, 2], np.arange(100) / 99, atol=1e-12)


def test_resample_quarter_arc_against_quadrature():
    m = arc_branch(1.0, 20)
    p = resample_skeleton(m, 5)
    t = np.array([m.spline.param_at_length(s) for s in np.linspace(0, m.length, 5)])
    gaps = [numeric_arc_length(m.spline, a, b) for a, b in zip(t[:-1], t[1:])]
    np.testing.assert_allclose(gaps, np.pi / 2 / 4, rtol=1e-3)
    np.testing.assert_allclose(p, m.spline(t), atol=1e-12)


def test_resample_rejects_n_below_two():
    with pytest.raises(InvalidParams):
        resample_skeleton(straight_branch(), 1)


# -- complete sampling ----------------------------------------------------------------
def test_complete_points_on_cylinder():
    m = straight_branch(0.01, 1.0)
    pc = sample_complete(m, 10000, 3)
    d = np.hypot(pc.points[:, 0], pc.points[:, 1])
    assert np.all(np.abs(d - 0.01) < 1e-9)


def test_complete_points_on_tapered_tube(rng):
    m = fit_spline(random_branch_skeleton(rng))
    pc, s, theta = sample_complete(m, 3000, 5, return_params=True)
    d = np.linalg.norm(pc.points - m.centerline(s), axis=1)
    assert np.max(np.abs(d - m.radius(s))) < 1e-9


def test_complete_sampling_deterministic(rng):
    m = fit_spline(random_branch_skeleton(rng))
    a = sample_complete(m, 500, 9).points
    b = sample_complete(m, 500, 9).points
    assert np.array_equal(a, b)
    assert not np.array_equal(a, sample_complete(m, 500, 10).points)


def test_area_uniformity_binomial():
    m = straight_branch(0.01, 1.0)
    n = 4000
    sd = np.sqrt(n * 0.25)
    for seed in range(20):
        z = sample_complete(m, n, seed).points[:, 2]
        assert abs(np.sum(z < 0.5) - n / 2) < 3 * sd


def test_area_uniformity_on_taper():
    # strongly tapered cone: expected share of the lower half follows the frustum areas
    m = straight_branch(0.02, 1.0, taper_angle=-0.8)
    r0, r1, rm = (float(m.radius(s)) for s in (0.0, 1.0, 0.5))
    p = (r0 + rm) / (r0 + 2 * rm + r1)
    n = 20000
    z = sample_complete(m, n, 1).points[:, 2]
    assert abs(np.sum(z < 0.5) - n * p) < 4 * np.sqrt(n * p * (1 - p))


def test_tree_sampling_labels_members():
    tree = generate_tree_unit(TreeUnitParams(depth=2, branches_per_unit=2), 4)
    pc = sample_complete(tree, 3000, 2)
    assert set(np.unique(pc.labels)) <= set(range(len(tree.members)))
    assert len(pc) == 3000


# -- gaps, occlusion, noise ---------------------------------------------------------
def test_gap_far_away_is_identity(cylinder):
    pc = sample_complete(cylinder, 1000, 1)
    out = corrupt_gaps(pc, [[5.0, 5.0, 5.0]], 0.05)
    assert np.array_equal(out.points, pc.points)


def test_gap_covering_everything_empties(cylinder):
    pc = sample_complete(cylinder, 1000, 1)
    out = corrupt_gaps(pc, [pc.points.mean(axis=0)], 10.0)
    assert len(out) == 0


def test_mid_gap_splits_cylinder_in_two():
    m = straight_branch(0.01, 1.0)
    pc = sample_complete(m, 8000, 2)
    out = corrupt_gaps(pc, [[0, 0, 0.5]], 0.05)
    pairs = cKDTree(out.points).query_pairs(0.02, output_type="ndarray")
    from scipy.sparse import coo_matrix
    g = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(len(out), len(out)))
    n_comp, _ = connected_components(g, directed=False)
    assert n_comp == 2


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 1000), st.floats(0.001, 0.3))
def test_gaps_only_remove_points_inside_balls(seed, radius):
    rng = np.random.default_rng(seed)
    pts = rng.standard_normal((200, 3)) * 0.2
    centers = rng.standard_normal((3, 3)) * 0.2
    out = corrupt_gaps(pts, centers, radius)
    inside = np.min(np.linalg.norm(pts[:, None] - centers[None], axis=-1), axis=1) <= radius
    np.testing.assert_array_equal(out.points, pts[~inside])


def test_occlude_drops_fraction_along_direction(cylinder):
    pc = sample_complete(cylinder, 1000, 1)
    out = occlude(pc, 0.4, [1.0, 0, 0])
    assert len(out) == 600
    assert out.points[:, 0].max() <= np.sort(pc.points[:, 0])[599]


def test_jitter_deterministic_and_scaled(cylinder):
    pc = sample_complete(cylinder, 5000, 1)
    a, b = jitter(pc, 0.002, 3), jitter(pc, 0.002, 3)
    assert np.array_equal(a.points, b.points)
    assert np.std(a.points - pc.points) == pytest.approx(0.002, rel=0.05)


# -- partial rendering ---------------------------------------------------------------
def test_render_far_side_invisible():
    m = straight_branch(0.01, 0.5)
    pc = render_partial(m, ViewConfig([1.0, 0.0, 0.25], 2048, 128), 0)
    assert len(pc) == 2048
    assert np.all(pc.points[:, 0] >= -1e-12)


def test_render_points_on_surface_and_visible(rng):
    m = fit_spline(random_branch_skeleton(rng))
    mid = m.centerline(m.length / 2)
    vp = mid + np.array([0.8, 0.3, 0.2])
    pc = render_partial(m, ViewConfig(vp, 1024, 128), 1)
    s = np.array([m.project(p) for p in pc.points]).ravel()
    d = np.linalg.norm(pc.points - m.centerline(s), axis=1)
    assert np.max(np.abs(d - m.radius(s))) < 1e-9
    dirs = pc.points - vp
    dist = np.linalg.norm(dirs, axis=1)
    hit, owner, _ = RayCaster(m).cast(vp, dirs / dist[:, None])
    assert np.all(owner == 0)
    assert np.all(hit >= dist - 1e-9)


def test_render_single_ray_miss_raises():
    # the one ray aims at the bounding-box center, which a quarter arc misses
    m = arc_branch(1.0, 20, r=0.01)
    lo, hi = model_bounds(m)
    vp = 0.5 * (lo + hi) + np.array([0.0, 5.0, 0.0])
    with pytest.raises(EmptyView):
        render_partial(m, ViewConfig(vp, 16, 1), 0)


def test_render_viewpoint_inside_box_rejected():
    m = straight_branch(0.01, 0.5)
    with pytest.raises(InvalidParams):
        render_partial(m, ViewConfig([0.0, 0.0, 0.25], 16, 8), 0)


# -- tree generation -------------------------------------------------------------------
def test_tree_unit_single_trunk():
    tree = generate_tree_unit(TreeUnitParams(depth=1, branches_per_unit=0), 0)
    assert tree.branches == []


def test_tree_unit_lateral_count():
    tree = generate_tree_unit(TreeUnitParams(depth=3, branches_per_unit=2), 0)
    assert len(tree.branches) == 6


@pytest.mark.parametrize("seed", range(5))
def test_tree_unit_radius_monotone_and_attached(seed):
    tree = generate_tree_unit(TreeUnitParams(depth=3, branches_per_unit=2), seed)
    s = np.linspace(0, tree.trunk.length, 200)
    assert np.all(np.diff(tree.trunk.radius(s)) <= 0)
    for i, (m, attach) in enumerate(tree.branches):
        assert 0.0 <= attach <= 1.0
        r = m.radius(np.linspace(0, m.length, 100))
        assert np.all(np.diff(r) <= 0)
        assert r[0] <= float(tree.trunk.radius(attach * tree.trunk.length)) + 1e-12
        assert tree.base_offset_error(i) < 1e-6


def test_tree_unit_deterministic():
    a = generate_tree_unit(TreeUnitParams(), 7)
    b = generate_tree_unit(TreeUnitParams(), 7)
    assert np.array_equal(sample_complete(a, 300, 1).points, sample_complete(b, 300, 1).points)


@pytest.mark.parametrize("kw", [dict(depth=0), dict(radius_decay=0.0), dict(radius_decay=1.5),
                                dict(branch_angle_range=(10.0, 95.0))])
def test_tree_unit_invalid_params(kw):
    with pytest.raises(InvalidParams):
        generate_tree_unit(TreeUnitParams(**kw), 0)


def test_fb_tree_branch_bases_on_trunk():
    tree = random_fb_tree(3, n_branches=6)
    assert len(tree.branches) == 6
    for i in range(6):
        assert tree.base_offset_error(i) < 1e-6


def test_truth_sidecar_matches_taper():
    m = straight_branch(0.02, 1.0, taper_angle=-0.5)
    t = branch_truth(m, (0, 0, 1), 1.2, offset=0.02)
    assert t["diameter_mm"] == pytest.approx(2000 * (0.02 + 0.02 * np.tan(np.radians(-0.5))))
    assert t["angle_deg"] == pytest.approx(0.0, abs=1e-9)
    assert t["length_cm"] == pytest.approx(100.0)
    assert t["height_m"] == 1.2


def test_skeleton_type_invariants():
    with pytest.raises(DegenerateSkeleton):
        Skeleton([[0, 0, 0]], [0.01])
    with pytest.raises(DegenerateSkeleton):
        Skeleton([[0, 0, 0], [0, 0, 0]], [0.01, 0.01])
    with pytest.raises(InvalidParams):
        Skeleton([[0, 0, 0], [0, 0, 1]], [0.01, 0.0])
    with pytest.raises(InvalidParams):
        SkeletalSphere([0, 0, np.nan], 0.01)
    with pytest.raises(InvalidParams):
        PointCloud([[0, 0, np.inf]])

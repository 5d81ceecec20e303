import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from branchkit import io
from branchkit.completion import TRACE_DTYPE
from branchkit.errors import IoError
from branchkit.synth_gen import PointCloud, Skeleton, random_fb_tree

from conftest import arc_branch

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(0, 40), st.just(3)), elements=finite))
def test_ply_round_trip_is_exact(tmp_path_factory, pts):
    p = tmp_path_factory.mktemp("ply") / "c.ply"
    io.write_ply(p, PointCloud(pts))
    back = io.read_cloud(p).points
    assert back.shape == pts.shape and np.array_equal(back, pts)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 40), st.just(3)), elements=finite))
def test_xyz_round_trip_is_exact(tmp_path_factory, pts):
    p = tmp_path_factory.mktemp("xyz") / "c.xyz"
    io.write_cloud(p, pts)
    assert np.array_equal(io.read_cloud(p).points, pts)


def test_format_detected_from_content(tmp_path):
    pts = np.arange(12, dtype=float).reshape(4, 3)
    p = tmp_path / "cloud.txt"
    io.write_ply(p, pts)
    assert np.array_equal(io.read_cloud(p).points, pts)


def test_ascii_ply_with_extra_properties(tmp_path):
    text = ("ply\nformat ascii 1.0\nelement vertex 2\nproperty float nx\nproperty float x\n"
            "property float y\nproperty float z\nend_header\n9 1 2 3\n9 4 5 6\n")
    p = tmp_path / "a.ply"
    p.write_text(text)
    assert np.array_equal(io.read_cloud(p).points, [[1, 2, 3], [4, 5, 6]])


def test_binary_float32_ply(tmp_path):
    pts = np.array([[1.5, 2.5, 3.5]], dtype="<f4")
    header = b"ply\nformat binary_little_endian 1.0\nelement vertex 1\n" \
             b"property float x\nproperty float y\nproperty float z\nend_header\n"
    p = tmp_path / "b.ply"
    p.write_bytes(header + pts.tobytes())
    assert np.array_equal(io.read_cloud(p).points, [[1.5, 2.5, 3.5]])


@pytest.mark.parametrize("content", [
    b"ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\n",  # no end_header
    b"ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nend_header\n1\n2\n",  # no y, z
    b"ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\n"
    b"end_header\n1 2 3\n",  # truncated
    b"ply\nformat binary_big_endian 1.0\nelement vertex 1\nproperty float x\nproperty float y\n"
    b"property float z\nend_header\n",
    b"1 2\n",
    b"1 2 zz\n",
])
def test_malformed_clouds_raise(tmp_path, content):
    p = tmp_path / "bad"
    p.write_bytes(content)
    with pytest.raises(IoError):
        io.read_cloud(p)


def test_missing_file(tmp_path):
    with pytest.raises(IoError):
        io.read_cloud(tmp_path / "nope.ply")
    with pytest.raises(IoError):
        io.read_json(tmp_path / "nope.json")


def test_skeleton_round_trip(tmp_path):
    sk = Skeleton(np.random.default_rng(0).normal(size=(7, 3)), np.linspace(0.02, 0.01, 7))
    io.write_json(tmp_path / "s.json", io.skeleton_to_dict(sk))
    back = io.skeleton_from_dict(io.read_json(tmp_path / "s.json"))
    assert np.array_equal(back.centers, sk.centers) and np.array_equal(back.radii, sk.radii)


def test_malformed_skeleton():
    with pytest.raises(IoError):
        io.skeleton_from_dict({"spheres": [{"c": [0, 0, 0]}]})


def test_branch_round_trip_reproduces_model():
    m = arc_branch(0.5, 12, r=0.015, taper_angle=-0.5)
    back = io.branch_from_dict(io.branch_to_dict(m))
    s = np.linspace(0, m.length, 50)
    np.testing.assert_allclose(back.centerline(s), m.centerline(s), atol=1e-12)
    assert back.taper == m.taper


def test_tree_round_trip(tmp_path):
    tree = random_fb_tree(4, n_branches=3)
    io.write_json(tmp_path / "t.json", io.tree_to_dict(tree))
    back = io.tree_from_dict(io.read_json(tmp_path / "t.json"))
    assert [m.id for m, _ in back.branches] == [m.id for m, _ in tree.branches]
    for (a, fa), (b, fb) in zip(tree.branches, back.branches):
        assert fa == fb
        np.testing.assert_allclose(a.centerline(a.length / 2), b.centerline(b.length / 2), atol=1e-12)
    assert back.provenance == tree.provenance


def test_trace_round_trip(tmp_path):
    tr = np.zeros(3, dtype=TRACE_DTYPE)
    tr["step"] = [0, 1, 2]
    tr["total"] = [1.0 / 3, 0.25, 0.1]
    io.write_trace_csv(tmp_path / "t.csv", tr)
    back = io.read_trace_csv(tmp_path / "t.csv")
    assert np.array_equal(back, tr)
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(IoError):
        io.read_trace_csv(tmp_path / "bad.csv")

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from conftest import single_triangle, smooth_field
from oracles import brute_force_raster
from uvtalk.geometry import (
    DegenerateGeometryError, MeshTopology, MotionMap, raster_plan, read_topology, rigid_align, uv_rasterize,
    uv_sample, write_topology,
)


def test_constant_field_fills_covered_texels():
    topo = single_triangle([[0.02, 0.02], [0.98, 0.02], [0.02, 0.98]])
    m = uv_rasterize(topo, np.tile([1.0, 2.0, 3.0], (3, 1)), 32)
    assert m.coverage.sum() > 0.4 * 32 * 32
    np.testing.assert_allclose(m.texels[m.coverage], np.tile([1.0, 2.0, 3.0], (m.coverage.sum(), 1)), atol=1e-12)
    assert np.all(m.texels[~m.coverage] == 0)


def test_zero_offsets_give_zero_map_same_coverage(face_topology):
    a = uv_rasterize(face_topology, np.zeros((face_topology.vertex_count, 3)), 64)
    b = uv_rasterize(face_topology, np.ones((face_topology.vertex_count, 3)), 64)
    assert np.all(a.texels == 0)
    np.testing.assert_array_equal(a.coverage, b.coverage)


def test_barycentric_values_match_oracle():
    uv = np.array([[0.1, 0.1], [0.9, 0.15], [0.3, 0.85]])
    vals = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], float)
    m = uv_rasterize(single_triangle(uv), vals, 64)
    inside, amb, ref = brute_force_raster(uv, vals, 64)
    np.testing.assert_array_equal(m.coverage[~amb], inside[~amb])
    np.testing.assert_allclose(m.texels[inside], ref[inside], atol=1e-12)
    # the texel value is (lambda_1, lambda_2, 0): e.g. barycentric (0.2, 0.3, 0.5) -> (0.3, 0.5, 0)
    assert np.all(m.texels[inside][:, 2] == 0)


def test_shared_edges_are_not_double_covered():
    # two triangles splitting a square along its diagonal; texel centres fall exactly on the diagonal
    uv = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    topo = MeshTopology(4, np.array([[0, 1, 2], [0, 2, 3]]), uv, np.array([1, 0, 0, 0], bool),
                        np.array([0, 0, 1, 0], bool))
    plan = raster_plan(topo, 16)
    assert plan.coverage.all()
    counts = np.zeros((16, 16), int)
    for face in ([0, 1, 2], [0, 2, 3]):
        sub = MeshTopology(4, np.array([face]), uv, topo.lip_mask, topo.upper_face_mask)
        counts += raster_plan(sub, 16).coverage
    assert counts.max() == 1 and counts.min() == 1


def test_rasterize_is_linear(face_topology, rng):
    n = face_topology.vertex_count
    m1, m2 = rng.normal(size=(n, 3)), rng.normal(size=(n, 3))
    lhs = uv_rasterize(face_topology, 2.5 * m1 - 0.7 * m2, 32).texels
    rhs = 2.5 * uv_rasterize(face_topology, m1, 32).texels - 0.7 * uv_rasterize(face_topology, m2, 32).texels
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_degenerate_triangles_counted():
    uv = np.array([[0.1, 0.1], [0.9, 0.1], [0.1, 0.9], [0.5, 0.5]])
    faces = np.array([[0, 1, 2], [0, 3, 3]])
    topo = MeshTopology(4, faces, uv, np.array([1, 0, 0, 0], bool), np.array([0, 1, 0, 0], bool))
    m = uv_rasterize(topo, np.zeros((4, 3)), 16)
    assert m.meta["degenerate_triangles"] == 1


def test_rasterize_rejects_bad_shapes(face_topology):
    with pytest.raises(ValueError):
        uv_rasterize(face_topology, np.zeros((3, 3)), 32)
    with pytest.raises(ValueError):
        uv_rasterize(face_topology, np.zeros((face_topology.vertex_count, 3)), 2)


def test_topology_invariants():
    uv = np.array([[0.1, 0.1], [0.9, 0.1], [0.1, 0.9]])
    with pytest.raises(ValueError):
        MeshTopology(3, np.array([[0, 1, 3]]), uv, np.zeros(3, bool), np.zeros(3, bool))
    with pytest.raises(ValueError):
        MeshTopology(3, np.array([[0, 1, 2]]), uv + 0.5, np.zeros(3, bool), np.zeros(3, bool))
    with pytest.raises(ValueError):
        MeshTopology(3, np.array([[0, 1, 2]]), uv, np.ones(3, bool), np.ones(3, bool))
    with pytest.raises(DegenerateGeometryError):
        MeshTopology(3, np.array([[0, 1, 1]]), uv, np.zeros(3, bool), np.zeros(3, bool))


def test_sample_constant_map(face_topology):
    texels = np.tile([1.0, 2.0, 3.0], (32, 32, 1))
    out, meta = uv_sample(face_topology, MotionMap(texels, np.ones((32, 32), bool)))
    np.testing.assert_allclose(out, np.tile([1.0, 2.0, 3.0], (face_topology.vertex_count, 1)), atol=1e-12)
    assert meta["uncovered_vertices"] == 0


def test_sample_uncovered_vertex_reads_zero():
    uv = np.array([[0.05, 0.05], [0.5, 0.05], [0.05, 0.5], [0.95, 0.95]])
    topo = MeshTopology(4, np.array([[0, 1, 2]]), uv, np.array([1, 0, 0, 0], bool), np.array([0, 1, 0, 0], bool))
    m = uv_rasterize(topo, np.ones((4, 3)), 32)
    out, meta = uv_sample(topo, m)
    assert meta["uncovered_vertices"] == 1
    np.testing.assert_array_equal(out[3], 0.0)


def test_linear_field_round_trips_exactly(face_topology):
    uv = face_topology.uv_coords
    x = np.stack([uv[:, 0], 2 * uv[:, 1] - 1, 0.3 + uv[:, 0] - uv[:, 1]], axis=1)
    out, _ = uv_sample(face_topology, uv_rasterize(face_topology, x, 64))
    np.testing.assert_allclose(out, x, atol=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_smooth_round_trip(face_topology, seed):
    x = smooth_field(face_topology.uv_coords, seed)
    out, meta = uv_sample(face_topology, uv_rasterize(face_topology, x, 64))
    assert meta["uncovered_vertices"] == 0
    assert np.abs(out - x).max() / np.abs(x).max() < 1e-3


def test_round_trip_improves_with_resolution(face_topology):
    x = smooth_field(face_topology.uv_coords, 0, freq=1.0)
    errs = [np.abs(uv_sample(face_topology, uv_rasterize(face_topology, x, R))[0] - x).max() for R in (32, 64)]
    assert errs[1] < errs[0]


def test_rigid_align_identity(rng):
    P = rng.normal(size=(20, 3))
    Rm, t, aligned = rigid_align(P, P)
    np.testing.assert_allclose(Rm, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(t, 0, atol=1e-12)
    np.testing.assert_allclose(aligned, P, atol=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_rigid_align_recovers_known_transform(seed):
    r = np.random.default_rng(seed)
    P = r.normal(size=(30, 3))
    R0 = Rotation.random(random_state=seed).as_matrix()
    t0 = r.normal(size=3)
    Rm, t, aligned = rigid_align(P, P @ R0.T + t0)
    np.testing.assert_allclose(Rm, R0, atol=1e-6)
    np.testing.assert_allclose(t, t0, atol=1e-6)
    np.testing.assert_allclose(aligned, P @ R0.T + t0, atol=1e-6)


def test_rigid_align_excludes_reflection(rng):
    P = rng.normal(size=(25, 3))
    Rm, _, _ = rigid_align(P * np.array([-1, 1, 1]), P)
    assert np.linalg.det(Rm) == pytest.approx(1.0, abs=1e-9)


def test_rigid_align_degenerate():
    line = np.outer(np.arange(5.0), [1.0, 2.0, 3.0])
    with pytest.raises(DegenerateGeometryError):
        rigid_align(line, line)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_rigid_align_never_worse_than_identity(seed):
    r = np.random.default_rng(seed)
    P, Q = r.normal(size=(10, 3)), r.normal(size=(10, 3))
    _, _, aligned = rigid_align(P, Q)
    assert ((aligned - Q) ** 2).sum() <= ((P - Q) ** 2).sum() + 1e-9


def test_topology_file_round_trip(tmp_path, face_topology):
    path = write_topology(tmp_path / "t.tt4d", face_topology)
    assert path.read_text().splitlines()[0] == "TT4D-TOPO 1"
    back = read_topology(path)
    assert back.fingerprint() == face_topology.fingerprint()
    np.testing.assert_array_equal(back.uv_coords, face_topology.uv_coords)


def test_topology_file_with_neutral_and_errors(tmp_path):
    uv = np.array([[0.1, 0.1], [0.9, 0.1], [0.1, 0.9]])
    topo = MeshTopology(3, np.array([[0, 1, 2]]), uv, np.array([1, 0, 0], bool), np.array([0, 1, 0], bool),
                        neutral=np.arange(9.0).reshape(3, 3))
    back = read_topology(write_topology(tmp_path / "t.tt4d", topo))
    np.testing.assert_array_equal(back.neutral, topo.neutral)
    bad = tmp_path / "bad.tt4d"
    bad.write_text("OBJ 1\n")
    with pytest.raises(ValueError):
        read_topology(bad)

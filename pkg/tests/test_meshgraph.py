import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gist_mini.errors import (
    DegenerateFaceError,
    MeshIndexError,
    MeshParseError,
    ParameterError,
    SizeError,
    UnsupportedElementError,
    ZeroDegreeError,
)
from gist_mini.meshgraph import (
    SurfaceMesh,
    build_graph,
    complete_graph,
    gen_icosphere,
    gen_thin_plate,
    gen_wing_flap,
    graph_from_edges,
    load_mesh,
    path_graph,
    random_walk_matrix,
    save_mesh,
    subdivide,
)

TRIANGLE = """\
v 0 0 0
v 1 0 0
v 0 1 0
g front_wing
f 1 2 3
"""


def square_mesh():
    v = [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]]
    return SurfaceMesh(v, [[0, 1, 2], [0, 2, 3]], ["a", "a"])


def unit_cube():
    v = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=float)
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    faces = []
    for a, b, c, d in quads:
        faces += [(a, b, c), (a, c, d)]
    return SurfaceMesh(v, faces, ["cube"] * 12, closed=True)


# -- parsing -----------------------------------------------------------------


def test_load_minimal_file():
    m = load_mesh(TRIANGLE)
    assert m.n_vertices == 3 and m.n_faces == 1
    assert m.face_pids == ("front_wing",)


def test_faces_before_group_get_default_pid():
    m = load_mesh("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
    assert m.face_pids == ("default",)


def test_missing_vertex_is_index_error():
    with pytest.raises(MeshIndexError):
        load_mesh("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 5\n")


def test_quad_rejected():
    with pytest.raises(UnsupportedElementError) as exc:
        load_mesh("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
    assert exc.value.lineno == 5


def test_malformed_line_reports_line_number():
    with pytest.raises(MeshParseError) as exc:
        load_mesh("v 0 0 0\nv 1 zero 0\n")
    assert exc.value.lineno == 2
    assert "line 2" in str(exc.value)


def test_zero_area_face_names_face():
    text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 2 0 0\nf 1 2 3\nf 1 2 4\n"
    with pytest.raises(DegenerateFaceError) as exc:
        load_mesh(text)
    assert exc.value.face == 1


def test_writer_format():
    text = save_mesh(load_mesh(TRIANGLE))
    assert text.splitlines()[3] == "g front_wing"
    assert text.endswith("f 1 2 3\n")
    assert "\r" not in text


@pytest.mark.parametrize("mesh", [
    gen_icosphere(1),
    gen_thin_plate(0.01, 3, 4),
    gen_wing_flap(1.7, 4),
])
def test_round_trip(mesh):
    again = load_mesh(save_mesh(mesh))
    assert np.array_equal(again.vertices, mesh.vertices)
    assert np.array_equal(again.faces, mesh.faces)
    assert again.face_pids == mesh.face_pids
    assert save_mesh(again) == save_mesh(mesh)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 3), st.floats(-3, 5), st.integers(4, 5))
def test_round_trip_property(level, alpha, res):
    for mesh in (gen_icosphere(level), gen_wing_flap(alpha, res)):
        again = load_mesh(save_mesh(mesh))
        assert np.array_equal(again.vertices, mesh.vertices)
        assert np.array_equal(again.faces, mesh.faces)


# -- graphs ------------------------------------------------------------------


def test_single_triangle_graph():
    g = build_graph(load_mesh(TRIANGLE))
    assert len(g.edges) == 3
    assert list(g.degrees) == [2, 2, 2]


def test_two_triangles_graph():
    g = build_graph(square_mesh())
    assert len(g.edges) == 5
    # vertices 0 and 2 carry the shared diagonal
    assert list(g.degrees) == [3, 2, 3, 2]


def test_icosahedron_graph():
    m = gen_icosphere(0)
    g = build_graph(m)
    assert len(g.edges) == 30
    assert set(g.degrees.tolist()) == {5}
    assert m.n_vertices - len(g.edges) + m.n_faces == 2


def test_graph_invariants_on_generated_meshes():
    for m in (gen_icosphere(2), gen_thin_plate(0.02, 5, 4), gen_wing_flap(-2.0, 4)):
        g = build_graph(m)
        a = g.adjacency
        assert (a != a.T).nnz == 0
        assert a.diagonal().sum() == 0
        assert g.degrees.min() >= 2
        for i in range(0, m.n_vertices, 37):
            assert g.degrees[i] == len(set(g.neighbors(i).tolist()))


def test_random_walk_path_graph():
    P = random_walk_matrix(path_graph(3)).toarray()
    assert np.array_equal(P, [[0, 1, 0], [0.5, 0, 0.5], [0, 1, 0]])


def test_random_walk_complete_graph():
    P = random_walk_matrix(complete_graph(3)).toarray()
    assert np.array_equal(P, 0.5 * (1 - np.eye(3)))


def test_isolated_vertex_rejected():
    with pytest.raises(ZeroDegreeError):
        random_walk_matrix(graph_from_edges(3, [(0, 1)]))


@pytest.mark.parametrize("mesh", [gen_icosphere(3), gen_thin_plate(0.01, 6, 7), gen_wing_flap(4.5, 4)])
def test_row_stochastic(mesh):
    g = build_graph(mesh)
    P = random_walk_matrix(g).matrix
    assert np.abs(np.asarray(P.sum(axis=1)).ravel() - 1).max() <= 1e-12
    rows = np.repeat(np.arange(g.n), np.diff(P.indptr))
    assert np.allclose(P.data, 1.0 / g.degrees[rows], rtol=0, atol=0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["ico1", "plate", "wing"]))
def test_permutation_equivariance(seed, which):
    mesh = {"ico1": lambda: gen_icosphere(1),
            "plate": lambda: gen_thin_plate(0.05, 6, 5),
            "wing": lambda: gen_wing_flap(0.0, 4)}[which]()
    if mesh.n_vertices > 200:
        mesh = gen_icosphere(2)
    perm = np.random.default_rng(seed).permutation(mesh.n_vertices)
    P = random_walk_matrix(build_graph(mesh)).toarray()
    Pp = random_walk_matrix(build_graph(mesh.permuted(perm))).toarray()
    assert np.array_equal(Pp, P[np.ix_(perm, perm)])


# -- generators --------------------------------------------------------------


@pytest.mark.parametrize("level", range(0, 5))
def test_icosphere_counts(level):
    m = gen_icosphere(level)
    assert m.n_vertices == 10 * 4 ** level + 2
    assert m.n_faces == 20 * 4 ** level
    assert m.closed
    assert np.abs(np.linalg.norm(m.vertices, axis=1) - 1).max() <= 1e-12


def test_icosphere_level2_counts():
    m = gen_icosphere(2)
    assert (m.n_vertices, m.n_faces) == (162, 320)


def test_icosphere_outward_orientation():
    m = gen_icosphere(2)
    assert np.all(np.einsum("ij,ij->i", m.face_normals(), m.face_centroids()) > 0)


def test_icosphere_level_cap():
    with pytest.raises(SizeError):
        gen_icosphere(8)


def test_thin_plate_basic():
    m = gen_thin_plate(0.01, 2, 2)
    assert m.n_vertices == 8
    assert set(m.face_pids) == {"sheet_upper", "sheet_lower", "joint"}
    # vertex k on the upper sheet sits above vertex k + nx*ny
    d = np.linalg.norm(m.vertices[:4] - m.vertices[4:], axis=1)
    assert np.allclose(d, 0.01, rtol=0, atol=1e-15)


def test_thin_plate_rejects_bad_gap():
    with pytest.raises(ParameterError):
        gen_thin_plate(0.0, 4, 4)
    with pytest.raises(ParameterError):
        gen_thin_plate(0.01, 1, 4)


@pytest.mark.parametrize("nx,ny", [(2, 2), (3, 5), (8, 3), (16, 16)])
def test_thin_plate_connected(nx, ny):
    assert build_graph(gen_thin_plate(0.01, nx, ny)).n_components() == 1


def _opposite_distance(nx, ny):
    m = gen_thin_plate(0.01, nx, ny)
    g = build_graph(m)
    i, j = (nx - 1) // 2, (ny - 1) // 2
    up = i * ny + j
    return g.distances_from(up)[up + nx * ny], np.linalg.norm(m.vertices[up] - m.vertices[up + nx * ny])


def test_thin_wall_topology():
    hops, dist = _opposite_distance(16, 16)
    assert hops >= 16
    assert dist == pytest.approx(0.01, abs=1e-15)


def test_thin_wall_distance_grows_with_nx():
    hops = [_opposite_distance(nx, 6)[0] for nx in (4, 8, 12, 16)]
    assert all(b > a for a, b in zip(hops, hops[1:]))


def test_wing_flap_zero_angle_normals():
    m = gen_wing_flap(0.0, 4)
    n = m.face_normals()
    flat = np.abs(n[:, 2]) > 0.999
    # interior faces of the flat skins are exactly horizontal
    assert np.all(np.abs(np.abs(n[flat, 2]) - 1) < 1e-12)
    assert np.all(np.abs(n[flat, :2]) < 1e-12)


def test_wing_flap_trailing_edge_offset():
    m = gen_wing_flap(2.0, 4)
    te = m.vertices[np.isclose(m.vertices[:, 0], m.vertices[:, 0].max())]
    assert te[:, 2] == pytest.approx(0.4 * math.sin(math.radians(2.0)), abs=1e-12)
    # the quoted 0.013962 is the small-angle value; the sine is 2.2e-6 lower
    assert 0.4 * math.sin(math.radians(2.0)) == pytest.approx(0.013962, abs=5e-6)


def test_wing_flap_closed_and_outward():
    m = gen_wing_flap(3.0, 5)
    assert m.closed
    assert m.pids == ["main", "flap"]
    v, f = m.vertices, m.faces
    vol = np.einsum("ij,ij->i", v[f[:, 0]], np.cross(v[f[:, 1]], v[f[:, 2]])).sum() / 6
    assert vol > 0


def test_wing_flap_face_count_quadratic():
    counts = [gen_wing_flap(0.5, r).n_faces for r in (4, 8)]
    assert counts[1] == 4 * counts[0]


def test_wing_flap_alpha_range():
    with pytest.raises(ParameterError):
        gen_wing_flap(5.5, 4)
    with pytest.raises(ParameterError):
        gen_wing_flap(-3.5, 4)


def test_subdivide_icosahedron():
    fine, corr = subdivide(gen_icosphere(0))
    assert (fine.n_vertices, fine.n_faces) == (42, 80)
    assert len(corr) == 12


def test_subdivide_twice_matches_level2():
    m = gen_icosphere(0)
    for _ in range(2):
        m, _ = subdivide(m)
    ref = gen_icosphere(2)
    a = m.vertices[np.lexsort(m.vertices.T[::-1])]
    b = ref.vertices[np.lexsort(ref.vertices.T[::-1])]
    assert np.abs(a - b).max() <= 1e-12


def test_subdivide_correspondence_bit_identical():
    m = gen_thin_plate(0.03, 4, 3)
    fine, corr = subdivide(m)
    assert np.array_equal(fine.vertices[corr.fine], m.vertices)
    assert fine.face_pids.count("joint") == 4 * m.face_pids.count("joint")


@pytest.mark.parametrize("mesh", [gen_icosphere(1), gen_wing_flap(1.0, 4), unit_cube()])
def test_subdivide_preserves_closedness(mesh):
    fine, _ = subdivide(mesh)
    assert fine.closed


def test_closed_flag_is_validated():
    with pytest.raises(ParameterError):
        SurfaceMesh(square_mesh().vertices, square_mesh().faces, ["a", "a"], closed=True)

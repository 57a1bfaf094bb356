import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gist_mini.errors import ParameterError, ShapeError, SizeError
from gist_mini.meshgraph import (
    build_graph,
    complete_graph,
    cycle_graph,
    gen_icosphere,
    gen_thin_plate,
    path_graph,
    random_walk_matrix,
    symmetric_walk_matrix,
)
from gist_mini.spectral import (
    FilterSpec,
    SpectralEmbedding,
    apply_filter,
    eigen_kernel_from_basis,
    estimate_error,
    exact_kernel,
    kernel_estimate,
    kernel_estimates,
    loglog_slope,
    mismatch_curve,
    random_gauge,
    spectral_embed,
    symmetric_eigen_kernel,
    symmetric_eigenpairs,
)

PATH = random_walk_matrix(path_graph(3))


def mean_estimates(P, filt, r, seeds, pairs):
    return np.array([kernel_estimates(spectral_embed(P, filt, r, s), pairs) for s in range(seeds)])


# -- filters -----------------------------------------------------------------


def test_filter_validation():
    with pytest.raises(ParameterError):
        FilterSpec((0.0, 0.0))
    with pytest.raises(ParameterError):
        FilterSpec(tuple([1.0] * 18))
    assert FilterSpec.parse("0.25,0.5,0.25").degree == 2
    assert FilterSpec((0.25, 0.5, 0.25))(1.0) == 1.0


def test_identity_filter_returns_input():
    X = np.random.default_rng(0).normal(size=(3, 5))
    assert np.array_equal(apply_filter(PATH, [1.0], X), X)


def test_path_graph_filter_examples():
    x = np.array([0.0, 1.0, 0.0])
    assert np.array_equal(apply_filter(PATH, [0, 1], x), [1, 0, 1])
    assert np.array_equal(apply_filter(PATH, [0, 0, 1], x), [0, 1, 0])


def test_apply_filter_shape_error():
    with pytest.raises(ShapeError):
        apply_filter(PATH, [1.0], np.zeros((4, 2)))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=1, max_size=6).filter(any), st.integers(0, 1000))
def test_horner_matches_power_sum(coef, seed):
    P = random_walk_matrix(build_graph(gen_icosphere(1)))
    X = np.random.default_rng(seed).normal(size=(P.n, 3))
    dense = P.toarray()
    ref = sum(c * np.linalg.matrix_power(dense, k) @ X for k, c in enumerate(coef))
    assert np.allclose(apply_filter(P, coef, X), ref, rtol=1e-12, atol=1e-12)


# -- exact kernels -------------------------------------------------------------


def test_exact_kernel_path():
    K = exact_kernel(PATH, [0, 1])
    assert np.array_equal(K, [[1, 0, 1], [0, 0.5, 0], [1, 0, 1]])


def test_exact_kernel_complete3():
    K = exact_kernel(random_walk_matrix(complete_graph(3)), [0, 1])
    assert np.allclose(K, 0.25 + 0.25 * np.eye(3), rtol=0, atol=1e-15)


@pytest.mark.parametrize("graph", [path_graph(5), cycle_graph(7), build_graph(gen_icosphere(1))])
def test_identity_filter_kernel(graph):
    P = random_walk_matrix(graph)
    assert np.array_equal(exact_kernel(P, [1.0]), np.eye(graph.n))
    assert np.abs(symmetric_eigen_kernel(graph, [1.0]) - np.eye(graph.n)).max() <= 1e-12


def test_exact_kernel_symmetric():
    K = exact_kernel(random_walk_matrix(build_graph(gen_thin_plate(0.05, 4, 5))))
    assert np.abs(K - K.T).max() <= 1e-10


def test_kernel_caps():
    with pytest.raises(SizeError):
        exact_kernel(random_walk_matrix(path_graph(5001)))
    with pytest.raises(SizeError):
        symmetric_eigen_kernel(path_graph(501))


def test_eigen_kernel_matches_symmetric_operator():
    g = complete_graph(3)
    ref = exact_kernel(symmetric_walk_matrix(g), [0, 1])
    assert np.abs(symmetric_eigen_kernel(g, [0, 1]) - ref).max() <= 1e-10


@pytest.mark.parametrize("graph", [path_graph(6), build_graph(gen_thin_plate(0.02, 3, 3))])
def test_eigen_kernel_matches_on_irregular_graphs(graph):
    ref = exact_kernel(symmetric_walk_matrix(graph), (0.25, 0.5, 0.25))
    assert np.abs(symmetric_eigen_kernel(graph) - ref).max() <= 1e-10


def test_cycle4_rotation_in_degenerate_pair():
    g = cycle_graph(4)
    mu, U = symmetric_eigenpairs(g)
    ref = eigen_kernel_from_basis(mu, U, [0.25, 0.5, 0.25])
    pair = np.flatnonzero(np.abs(mu) < 1e-8)
    assert len(pair) == 2
    th = 0.7
    Q = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    V = U.copy()
    V[:, pair] = U[:, pair] @ Q
    assert np.abs(eigen_kernel_from_basis(mu, V, [0.25, 0.5, 0.25]) - ref).max() <= 1e-10


@pytest.mark.parametrize("graph", [cycle_graph(4), cycle_graph(6), build_graph(gen_icosphere(0))])
def test_gauge_invariance(graph):
    mu, U = symmetric_eigenpairs(graph)
    ref = eigen_kernel_from_basis(mu, U, (0.25, 0.5, 0.25))
    rng = np.random.default_rng(11)
    for _ in range(20):
        V = random_gauge(mu, U, rng)
        assert np.abs(V.T @ V - np.eye(graph.n)).max() <= 1e-12
        assert np.abs(eigen_kernel_from_basis(mu, V, (0.25, 0.5, 0.25)) - ref).max() <= 1e-10


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_exact_kernel_permutation_equivariance(seed):
    mesh = gen_icosphere(1)
    perm = np.random.default_rng(seed).permutation(mesh.n_vertices)
    K = exact_kernel(random_walk_matrix(build_graph(mesh)))
    Kp = exact_kernel(random_walk_matrix(build_graph(mesh.permuted(perm))))
    assert np.abs(Kp - K[np.ix_(perm, perm)]).max() <= 1e-12


def test_thin_wall_separation():
    nx = ny = 16
    m = gen_thin_plate(0.01, nx, ny)
    g = build_graph(m)
    K = exact_kernel(random_walk_matrix(g))
    for i in range(5, 11):
        for j in range(5, 11):
            up = i * ny + j
            down = up + nx * ny
            near = min(K[up, k] for k in g.neighbors(up))
            assert K[up, down] <= 0.1 * near


# -- random projection ---------------------------------------------------------


def test_embed_rejects_bad_r():
    with pytest.raises(ParameterError):
        spectral_embed(PATH, [1.0], 0)


def test_embed_is_filter_times_random_matrix():
    P = random_walk_matrix(build_graph(gen_icosphere(1)))
    emb = spectral_embed(P, (0.25, 0.5, 0.25), 100, seed=4)
    R = np.hstack([np.random.default_rng([4, b]).standard_normal((P.n, w)) / 10
                   for b, w in ((0, 64), (1, 36))])
    F = apply_filter(P, (0.25, 0.5, 0.25), np.eye(P.n))
    assert np.allclose(emb.phi, F @ R, rtol=0, atol=1e-13)


def test_thread_count_determinism():
    P = random_walk_matrix(build_graph(gen_icosphere(3)))
    a = spectral_embed(P, (0.25, 0.5, 0.25), 300, seed=9, threads=1)
    b = spectral_embed(P, (0.25, 0.5, 0.25), 300, seed=9, threads=8)
    assert np.array_equal(a.phi, b.phi)


def test_threads_env(monkeypatch):
    monkeypatch.setenv("GIST_THREADS", "3")
    a = spectral_embed(PATH, [1.0], 200, seed=1)
    monkeypatch.setenv("GIST_THREADS", "1")
    assert np.array_equal(a.phi, spectral_embed(PATH, [1.0], 200, seed=1).phi)
    monkeypatch.setenv("GIST_THREADS", "many")
    with pytest.raises(ParameterError):
        spectral_embed(PATH, [1.0], 200, seed=1)


def test_identity_filter_moments():
    P = random_walk_matrix(cycle_graph(5))
    est = mean_estimates(P, [1.0], 256, 200, np.array([[0, 0], [1, 1], [0, 2], [1, 4]]))
    m = est.mean(axis=0)
    assert np.all(np.abs(m[:2] - 1) <= 0.05)
    assert np.all(np.abs(m[2:]) <= 0.05)


def test_path_graph_means():
    est = mean_estimates(PATH, [0, 1], 256, 200, np.array([[0, 2], [0, 1]])).mean(axis=0)
    assert est[0] == pytest.approx(1.0, abs=0.05)
    assert est[1] == pytest.approx(0.0, abs=0.05)


def test_kernel_estimate_symmetry_and_bounds():
    emb = spectral_embed(PATH, [0, 1], 32, 0)
    assert kernel_estimate(emb, 0, 2) == kernel_estimate(emb, 2, 0)
    with pytest.raises(IndexError):
        kernel_estimate(emb, 0, 3)


def test_variance_shrinks_with_r():
    P = random_walk_matrix(cycle_graph(6))
    pairs = np.array([[0, 1]])
    s256 = mean_estimates(P, (0.25, 0.5, 0.25), 256, 300, pairs).std()
    s1024 = mean_estimates(P, (0.25, 0.5, 0.25), 1024, 300, pairs).std()
    assert s1024 / s256 == pytest.approx(0.5, rel=0.2)


def test_error_rate_halving_r():
    P = random_walk_matrix(build_graph(gen_icosphere(1)))
    e_hi = estimate_error(P, r=512, seeds=40)
    e_lo = estimate_error(P, r=256, seeds=40)
    assert e_lo / e_hi == pytest.approx(np.sqrt(2), rel=0.25)


def test_embedding_text_round_trip():
    emb = spectral_embed(PATH, [0, 1], 5, 7)
    text = emb.to_text()
    assert text.startswith("GIST-EMB 3 5 7\n")
    back = SpectralEmbedding.from_text(text, [0, 1])
    assert np.array_equal(back.phi, emb.phi) and back.seed == 7
    with pytest.raises(ParameterError):
        SpectralEmbedding.from_text("EMB 3 5 7\n")


def test_embedding_finite():
    P = random_walk_matrix(build_graph(gen_thin_plate(0.01, 8, 8)))
    assert np.isfinite(spectral_embed(P, (0.25, 0.5, 0.25), 64, 0).phi).all()


# -- discretization and scaling ------------------------------------------------


def test_mismatch_oracle_decreasing():
    curve = mismatch_curve([1, 2, 3], oracle=True)
    assert [n for n, _ in curve] == [42, 162]
    assert curve[1][1] < curve[0][1]


def test_mismatch_identity_filter_zero():
    assert all(d == 0 for _, d in mismatch_curve([0, 1, 2], [1.0], oracle=True))
    assert all(d == 0 for _, d in mismatch_curve([0, 1], [1.0], r=64, seeds=2))


def test_mismatch_needs_two_levels():
    with pytest.raises(ParameterError):
        mismatch_curve([2], oracle=True)


def test_loglog_slope_exact():
    x = np.array([1.0, 10.0, 100.0])
    assert loglog_slope(x, 3 * x ** 1.5) == pytest.approx(1.5, abs=1e-12)


def test_icosahedron_embed_is_fast():
    P = random_walk_matrix(build_graph(gen_icosphere(0)))
    spectral_embed(P, (0.25, 0.5, 0.25), 64, 0)
    best = min(_timed(lambda: spectral_embed(P, (0.25, 0.5, 0.25), 64, 0)) for _ in range(5))
    assert best < 1e-3


def _timed(fn):
    t0 = time.perf_counter()
    fn()
    return time.perf_counter() - t0


def test_time_doubles_with_r():
    P = random_walk_matrix(build_graph(gen_icosphere(6)))
    t = {}
    for r in (128, 256):
        spectral_embed(P, (0.25, 0.5, 0.25), r, 0, threads=1)
        t[r] = min(_timed(lambda: spectral_embed(P, (0.25, 0.5, 0.25), r, 0, threads=1)) for _ in range(3))
    assert t[256] / t[128] == pytest.approx(2.0, rel=0.3)

"""Random-projection spectral embeddings and their exact kernel oracles.

The embedding is ``Phi = f(P) R`` with ``f`` a polynomial in the random-walk
matrix and ``R`` Gaussian with variance ``1/r``, so ``E[R R^T] = I`` and row
inner products estimate ``K = f(P) f(P)^T`` without any eigendecomposition.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .errors import ParameterError, ShapeError, SizeError
from .meshgraph import build_graph, gen_icosphere, random_walk_matrix, subdivide, symmetric_walk_matrix

DEFAULT_FILTER = (0.25, 0.5, 0.25)
MAX_FILTER_DEGREE = 16
EXACT_KERNEL_CAP = 5000
EIGEN_KERNEL_CAP = 500
BLOCK_COLUMNS = 64


@dataclass(frozen=True)
class FilterSpec:
    """Polynomial filter ``f(P) = sum_k c_k P^k``."""

    coefficients: tuple = DEFAULT_FILTER

    def __post_init__(self):
        c = tuple(float(x) for x in self.coefficients)
        if not c or not any(c):
            raise ParameterError("filter needs at least one nonzero coefficient")
        if len(c) - 1 > MAX_FILTER_DEGREE:
            raise ParameterError(f"filter degree {len(c) - 1} exceeds {MAX_FILTER_DEGREE}")
        if not all(np.isfinite(c)):
            raise ParameterError("filter coefficients must be finite")
        object.__setattr__(self, "coefficients", c)

    @property
    def degree(self):
        return len(self.coefficients) - 1

    def __call__(self, lam):
        """Scalar response ``f(lambda)``."""
        return np.polyval(self.coefficients[::-1], lam)

    @classmethod
    def parse(cls, text):
        return cls(tuple(float(x) for x in text.split(",") if x.strip()))


def _as_filter(f):
    return f if isinstance(f, FilterSpec) else FilterSpec(tuple(f))


def _matrix(P):
    return P.matrix if hasattr(P, "matrix") else sparse.csr_matrix(P)


def apply_filter(P, filt, X):
    """Horner evaluation of ``f(P) X`` with sparse products only."""
    filt = _as_filter(filt)
    M = _matrix(P)
    X = np.asarray(X, dtype=float)
    squeeze = X.ndim == 1
    if squeeze:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] != M.shape[0] or X.shape[1] < 1:
        raise ShapeError(f"X shape {X.shape} incompatible with operator of size {M.shape[0]}")
    c = filt.coefficients
    Y = c[-1] * X
    for ck in reversed(c[:-1]):
        Y = M @ Y
        if ck:
            Y += ck * X
    return Y[:, 0] if squeeze else Y


@dataclass(frozen=True, eq=False)
class SpectralEmbedding:
    phi: np.ndarray
    seed: int
    filter: FilterSpec

    @property
    def n(self):
        return self.phi.shape[0]

    @property
    def r(self):
        return self.phi.shape[1]

    def to_text(self):
        lines = [f"GIST-EMB {self.n} {self.r} {self.seed}"]
        lines += [" ".join(f"{x:.17g}" for x in row) for row in self.phi]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text, filt=DEFAULT_FILTER):
        rows = text.strip().splitlines()
        head = rows[0].split()
        if head[0] != "GIST-EMB" or len(head) != 4:
            raise ParameterError("embedding header must be 'GIST-EMB N r seed'")
        n, r, seed = int(head[1]), int(head[2]), int(head[3])
        phi = np.array([[float(x) for x in row.split()] for row in rows[1:]]).reshape(-1, r)
        if phi.shape != (n, r):
            raise ShapeError(f"embedding body {phi.shape} != ({n}, {r})")
        return cls(phi, seed, _as_filter(filt))


def random_block(n, seed, block, width, r):
    """Column block ``block`` of ``R``; each block has its own RNG stream."""
    rng = np.random.default_rng([seed, block])
    return rng.standard_normal((n, width)) / np.sqrt(r)


def _n_threads():
    try:
        return max(1, int(os.environ.get("GIST_THREADS", os.cpu_count() or 1)))
    except ValueError:
        raise ParameterError("GIST_THREADS must be an integer") from None


def spectral_embed(P, filt=DEFAULT_FILTER, r=64, seed=0, threads=None):
    """Compute ``Phi = f(P) R``; identical output for any thread count."""
    filt = _as_filter(filt)
    if r < 1 or int(r) != r:
        raise ParameterError("embedding dimension r must be a positive integer")
    r = int(r)
    M = _matrix(P)
    n = M.shape[0]
    starts = list(range(0, r, BLOCK_COLUMNS))
    phi = np.empty((n, r))

    def work(b):
        lo = starts[b]
        width = min(BLOCK_COLUMNS, r - lo)
        phi[:, lo:lo + width] = apply_filter(M, filt, random_block(n, seed, b, width, r))

    threads = threads or _n_threads()
    if threads == 1 or len(starts) == 1:
        for b in range(len(starts)):
            work(b)
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            list(ex.map(work, range(len(starts))))
    return SpectralEmbedding(phi, int(seed), filt)


def kernel_estimate(emb, i, j):
    n = emb.n
    for k in (i, j):
        if not -n <= k < n:
            raise IndexError(f"vertex index {k} out of range for N={n}")
    return float(emb.phi[i] @ emb.phi[j])


def kernel_estimates(emb, pairs):
    """Vectorized ``<phi_i, phi_j>`` for an ``(M, 2)`` index array."""
    pairs = np.asarray(pairs)
    return np.einsum("ij,ij->i", emb.phi[pairs[:, 0]], emb.phi[pairs[:, 1]])


def filter_matrix(P, filt):
    """Dense ``f(P)`` built by filtering the identity."""
    M = _matrix(P)
    return apply_filter(M, filt, np.eye(M.shape[0]))


def exact_kernel(P, filt=DEFAULT_FILTER):
    """Dense oracle ``f(P) f(P)^T``; no eigenvectors involved."""
    n = _matrix(P).shape[0]
    if n > EXACT_KERNEL_CAP:
        raise SizeError(f"N={n} exceeds dense kernel cap {EXACT_KERNEL_CAP}")
    F = filter_matrix(P, filt)
    K = F @ F.T
    return 0.5 * (K + K.T)


def symmetric_eigenpairs(graph):
    n = graph.n
    if n > EIGEN_KERNEL_CAP:
        raise SizeError(f"N={n} exceeds eigen kernel cap {EIGEN_KERNEL_CAP}")
    mu, U = np.linalg.eigh(symmetric_walk_matrix(graph).toarray())
    return mu, U


def eigen_kernel_from_basis(mu, U, filt):
    """``sum_l f(mu_l)^2 u_l u_l^T`` for an arbitrary orthonormal eigenbasis."""
    w = _as_filter(filt)(mu) ** 2
    return (U * w) @ U.T


def symmetric_eigen_kernel(graph, filt=DEFAULT_FILTER):
    mu, U = symmetric_eigenpairs(graph)
    return eigen_kernel_from_basis(mu, U, filt)


def eigen_clusters(mu, tol=1e-8):
    """Index groups of (numerically) equal eigenvalues; ``mu`` ascending."""
    groups, start = [], 0
    for k in range(1, len(mu) + 1):
        if k == len(mu) or mu[k] - mu[k - 1] > tol:
            groups.append(np.arange(start, k))
            start = k
    return groups


def random_gauge(mu, U, rng):
    """Re-express ``U`` in a random gauge: sign flips plus random rotations
    inside every degenerate eigenspace."""
    V = U * rng.choice([-1.0, 1.0], size=U.shape[1])
    for g in eigen_clusters(mu):
        if len(g) > 1:
            Q, R = np.linalg.qr(rng.standard_normal((len(g), len(g))))
            Q *= np.sign(np.diag(R))
            V[:, g] = V[:, g] @ Q
    return V


# ---------------------------------------------------------------------------
# empirical checks of the discretization and scaling claims


def local_pairs(graph):
    """Diagonal pairs plus every edge: the pairs on which kernels are compared."""
    diag = np.stack([np.arange(graph.n)] * 2, 1)
    return np.vstack([diag, graph.edges])


def _icosphere_chain(levels):
    meshes = {}
    top = max(levels)
    mesh = gen_icosphere(min(levels))
    meshes[min(levels)] = mesh
    for lev in range(min(levels) + 1, top + 1):
        mesh, _ = subdivide(mesh)
        meshes[lev] = mesh
    return meshes


def mismatch_curve(levels, filt=DEFAULT_FILTER, r=4096, seeds=1, oracle=False, base_seed=0):
    """Mean ``|K_n(i,j) - K_n'(i,j)|`` between consecutive icosphere levels.

    Pairs are all ``i <= j`` among the coarse level's vertices, which keep
    their indices on the finer mesh. With ``oracle`` the exact kernel replaces
    the random estimates. Returns a list of ``(n_coarse, mismatch)``.
    """
    levels = sorted(int(x) for x in levels)
    if len(levels) < 2:
        raise ParameterError("need at least two levels")
    meshes = _icosphere_chain(levels)
    ops = {lev: random_walk_matrix(build_graph(meshes[lev])) for lev in levels}
    out = []
    for a, b in zip(levels, levels[1:]):
        n = meshes[a].n_vertices
        iu = np.triu_indices(n)
        if oracle:
            Ka, Kb = exact_kernel(ops[a], filt), exact_kernel(ops[b], filt)
            diff = np.abs(Ka[iu] - Kb[:n, :n][iu]).mean()
        else:
            acc = []
            for s in range(seeds):
                fa = spectral_embed(ops[a], filt, r, base_seed + s).phi
                fb = spectral_embed(ops[b], filt, r, base_seed + s).phi[:n]
                acc.append(np.abs((fa @ fa.T)[iu] - (fb @ fb.T)[iu]).mean())
            diff = float(np.mean(acc))
        out.append((n, float(diff)))
    return out


def estimate_error(P, filt=DEFAULT_FILTER, r=256, seeds=50, pairs=None, base_seed=0):
    """Root-mean-square error of kernel estimates against the exact kernel."""
    K = exact_kernel(P, filt)
    n = K.shape[0]
    if pairs is None:
        iu = np.triu_indices(n)
        pairs = np.stack(iu, 1)
    truth = K[pairs[:, 0], pairs[:, 1]]
    sq = [np.mean((kernel_estimates(spectral_embed(P, filt, r, base_seed + s), pairs) - truth) ** 2)
          for s in range(seeds)]
    return float(np.sqrt(np.mean(sq)))


def loglog_slope(x, y):
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def scaling_bench(levels, filt=DEFAULT_FILTER, r=64, repeats=3, seed=0):
    """Time :func:`spectral_embed` on icosphere levels; best of ``repeats``.

    Returns ``(rows, slope)`` with rows ``(N, seconds)`` and the fitted
    log-log slope of time against N.
    """
    levels = list(levels)
    if levels != sorted(levels):
        raise ParameterError("sizes must be ascending")
    meshes = _icosphere_chain(levels)
    rows = []
    for lev in levels:
        P = random_walk_matrix(build_graph(meshes[lev]))
        spectral_embed(P, filt, r, seed)
        best = np.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            spectral_embed(P, filt, r, seed)
            best = min(best, time.perf_counter() - t0)
        rows.append((P.n, best))
    slope = loglog_slope([n for n, _ in rows], [t for _, t in rows]) if len(rows) > 1 else float("nan")
    return rows, slope

"""Triangle surface meshes, synthetic geometries and the graph operators built on them.

A :class:`SurfaceMesh` is immutable once built. Graph construction uses the
1-ring vertex adjacency induced by the faces; the random-walk matrix
``P = D^-1 A`` is stored as a scipy CSR matrix.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from .errors import (
    DegenerateFaceError,
    MeshIndexError,
    MeshParseError,
    ParameterError,
    SizeError,
    UnsupportedElementError,
    ZeroDegreeError,
)

MAX_ICOSPHERE_LEVEL = 7

# wing/flap geometry (meters)
MAIN_CHORD = 1.0
FLAP_CHORD = 0.4
SPAN = 0.5
THICKNESS = 0.08
CHORD_RAMP = 0.15
SPAN_RAMP = 0.1
ALPHA_RANGE = (-3.0, 5.0)


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SurfaceMesh:
    """Triangle mesh with one PID label per face.

    ``closed`` is computed from the edge structure when left as None; passing
    True asserts it. ``spherical`` marks meshes whose vertices lie on the unit
    sphere so that :func:`subdivide` projects new midpoints back onto it.
    """

    vertices: np.ndarray
    faces: np.ndarray
    face_pids: tuple
    closed: bool | None = None
    spherical: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        pids = tuple(str(p) for p in self.face_pids)
        if len(pids) != len(f):
            raise ParameterError(f"{len(pids)} PIDs for {len(f)} faces")
        if len(f):
            bad = np.flatnonzero((f < 0).any(axis=1) | (f >= len(v)).any(axis=1))
            if len(bad):
                raise MeshIndexError(f"face {bad[0]} references a missing vertex")
            rep = np.flatnonzero((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2]))
            if len(rep):
                raise DegenerateFaceError(int(rep[0]), "face repeats a vertex")
            e1 = v[f[:, 1]] - v[f[:, 0]]
            e2 = v[f[:, 2]] - v[f[:, 0]]
            area2 = np.linalg.norm(np.cross(e1, e2), axis=1)
            scale = np.maximum(np.einsum("ij,ij->i", e1, e1), np.einsum("ij,ij->i", e2, e2))
            zero = np.flatnonzero(area2 <= 1e-12 * scale)
            if len(zero):
                raise DegenerateFaceError(int(zero[0]), "zero-area face")
        object.__setattr__(self, "vertices", _frozen(v))
        object.__setattr__(self, "faces", _frozen(f))
        object.__setattr__(self, "face_pids", pids)
        is_closed = _edges_closed(f)
        if self.closed is None:
            object.__setattr__(self, "closed", is_closed)
        elif self.closed and not is_closed:
            raise ParameterError("mesh flagged closed but has edges not shared by exactly two faces")

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_faces(self):
        return len(self.faces)

    @property
    def pids(self):
        """Distinct PIDs in order of first appearance."""
        return list(dict.fromkeys(self.face_pids))

    def face_normals(self):
        """Unit outward normals (counter-clockwise orientation)."""
        n = self._cross()
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    def face_areas(self):
        return 0.5 * np.linalg.norm(self._cross(), axis=1)

    def face_centroids(self):
        return self.vertices[self.faces].mean(axis=1)

    def vertex_normals(self):
        """Area-weighted average of incident face normals, normalized."""
        acc = np.zeros_like(self.vertices)
        cr = self._cross()
        for c in range(3):
            np.add.at(acc, self.faces[:, c], cr)
        nrm = np.linalg.norm(acc, axis=1, keepdims=True)
        nrm[nrm == 0] = 1.0
        return acc / nrm

    def _cross(self):
        v, f = self.vertices, self.faces
        return np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])

    def with_meta(self, **kw):
        meta = dict(self.meta)
        meta.update(kw)
        return SurfaceMesh(self.vertices, self.faces, self.face_pids, self.closed, self.spherical, meta)

    def permuted(self, perm):
        """Relabel vertices so that new vertex ``k`` is old vertex ``perm[k]``."""
        perm = np.asarray(perm)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        return SurfaceMesh(self.vertices[perm], inv[self.faces], self.face_pids,
                           self.closed, self.spherical, dict(self.meta))


def _edge_counts(faces):
    e = np.sort(faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
    return np.unique(e, axis=0, return_counts=True)


def _edges_closed(faces):
    if len(faces) == 0:
        return False
    _, counts = _edge_counts(faces)
    return bool(np.all(counts == 2))


# ---------------------------------------------------------------------------
# OBJ-with-groups I/O

_IGNORED = {"o", "s", "vn", "vt", "mtllib", "usemtl", "l"}


def load_mesh(text):
    """Parse Wavefront-style text with ``v``, ``g`` and ``f`` records."""
    vertices, faces, pids = [], [], []
    pid = "default"
    for lineno, raw in enumerate(io.StringIO(text), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        key = tok[0]
        if key == "v":
            if len(tok) < 4:
                raise MeshParseError("vertex needs three coordinates", lineno)
            try:
                vertices.append([float(x) for x in tok[1:4]])
            except ValueError:
                raise MeshParseError(f"bad vertex coordinate in {line!r}", lineno) from None
        elif key == "g":
            if len(tok) < 2:
                raise MeshParseError("group line without a name", lineno)
            pid = " ".join(tok[1:])
        elif key == "f":
            if len(tok) != 4:
                raise UnsupportedElementError(
                    f"only triangular faces are supported, got {len(tok) - 1} vertices", lineno)
            idx = []
            for t in tok[1:]:
                try:
                    k = int(t.split("/")[0])
                except ValueError:
                    raise MeshParseError(f"bad face index {t!r}", lineno) from None
                if k < 0:
                    k = len(vertices) + 1 + k
                if not 1 <= k <= len(vertices):
                    raise MeshIndexError(f"line {lineno}: face references missing vertex {t}")
                idx.append(k - 1)
            faces.append(idx)
            pids.append(pid)
        elif key in _IGNORED:
            continue
        else:
            raise MeshParseError(f"unknown record {key!r}", lineno)
    return SurfaceMesh(np.array(vertices, dtype=float).reshape(-1, 3),
                       np.array(faces, dtype=np.int64).reshape(-1, 3), pids)


def save_mesh(mesh):
    """Serialize to text: vertices first, then faces grouped by PID."""
    out = []
    for x, y, z in mesh.vertices:
        out.append(f"v {x:.17g} {y:.17g} {z:.17g}\n")
    pids = np.array(mesh.face_pids, dtype=object)
    for pid in mesh.pids:
        out.append(f"g {pid}\n")
        for a, b, c in mesh.faces[pids == pid] + 1:
            out.append(f"f {a} {b} {c}\n")
    return "".join(out)


# ---------------------------------------------------------------------------
# graphs


@dataclass(frozen=True, eq=False)
class MeshGraph:
    n: int
    edges: np.ndarray  # (E, 2), i < j, lexicographically sorted
    adjacency: sparse.csr_matrix

    @property
    def degrees(self):
        return np.diff(self.adjacency.indptr)

    def neighbors(self, i):
        a = self.adjacency
        return a.indices[a.indptr[i]:a.indptr[i + 1]]

    def distances_from(self, i):
        """Hop distances from vertex ``i`` (inf when unreachable)."""
        return csgraph.shortest_path(self.adjacency, unweighted=True, indices=[i])[0]

    def n_components(self):
        return csgraph.connected_components(self.adjacency, directed=False)[0]


@dataclass(frozen=True, eq=False)
class SparseOperator:
    """Square sparse operator; ``P = D^-1 A`` unless ``symmetric``."""

    matrix: sparse.csr_matrix
    symmetric: bool = False

    @property
    def n(self):
        return self.matrix.shape[0]

    @property
    def nnz(self):
        return self.matrix.nnz

    def toarray(self):
        return self.matrix.toarray()


@dataclass(frozen=True)
class CorrespondenceMap:
    """``fine[i]`` is the refined-mesh index of coarse vertex ``i``."""

    fine: np.ndarray

    def __len__(self):
        return len(self.fine)


def graph_from_edges(n, edges):
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    edges = np.unique(np.sort(edges, axis=1), axis=0)
    if len(edges) and np.any(edges[:, 0] == edges[:, 1]):
        raise ParameterError("self-loop in edge list")
    i = np.concatenate([edges[:, 0], edges[:, 1]])
    j = np.concatenate([edges[:, 1], edges[:, 0]])
    adj = sparse.csr_matrix((np.ones(len(i)), (i, j)), shape=(n, n))
    adj.sort_indices()
    return MeshGraph(n, _frozen(edges), adj)


def build_graph(mesh):
    """1-ring vertex graph: the union of the three edges of every face."""
    e = mesh.faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
    return graph_from_edges(mesh.n_vertices, e)


def path_graph(n):
    return graph_from_edges(n, [(i, i + 1) for i in range(n - 1)])


def cycle_graph(n):
    return graph_from_edges(n, [(i, (i + 1) % n) for i in range(n)])


def complete_graph(n):
    return graph_from_edges(n, [(i, j) for i in range(n) for j in range(i + 1, n)])


def random_walk_matrix(graph):
    deg = graph.degrees
    if np.any(deg == 0):
        raise ZeroDegreeError(f"vertex {int(np.flatnonzero(deg == 0)[0])} is isolated")
    a = graph.adjacency
    p = sparse.csr_matrix((np.repeat(1.0 / deg, deg), a.indices.copy(), a.indptr.copy()), shape=a.shape)
    return SparseOperator(p)


def symmetric_walk_matrix(graph):
    """``D^-1/2 A D^-1/2``: similar to ``P`` and symmetric."""
    deg = graph.degrees
    if np.any(deg == 0):
        raise ZeroDegreeError(f"vertex {int(np.flatnonzero(deg == 0)[0])} is isolated")
    s = sparse.diags(1.0 / np.sqrt(deg))
    return SparseOperator(sparse.csr_matrix(s @ graph.adjacency @ s), symmetric=True)


# ---------------------------------------------------------------------------
# synthetic geometry

_PHI = (1.0 + math.sqrt(5.0)) / 2.0
_ICO_V = np.array([
    [-1, _PHI, 0], [1, _PHI, 0], [-1, -_PHI, 0], [1, -_PHI, 0],
    [0, -1, _PHI], [0, 1, _PHI], [0, -1, -_PHI], [0, 1, -_PHI],
    [_PHI, 0, -1], [_PHI, 0, 1], [-_PHI, 0, -1], [-_PHI, 0, 1],
], dtype=float)
_ICO_F = np.array([
    [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
    [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
    [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
    [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
])


def icosahedron():
    v = _ICO_V / np.linalg.norm(_ICO_V, axis=1, keepdims=True)
    return SurfaceMesh(v, _ICO_F, ["sphere"] * 20, closed=True, spherical=True)


def gen_icosphere(level):
    if level < 0 or int(level) != level:
        raise ParameterError("level must be a non-negative integer")
    if level > MAX_ICOSPHERE_LEVEL:
        raise SizeError(f"icosphere level {level} exceeds cap {MAX_ICOSPHERE_LEVEL}")
    mesh = icosahedron()
    for _ in range(int(level)):
        mesh, _ = subdivide(mesh)
    return mesh


def subdivide(mesh):
    """Split every triangle into four at the edge midpoints.

    Original vertices keep their indices; midpoints are appended in sorted
    edge order. Children of a face are emitted consecutively so PID blocks
    stay contiguous.
    """
    f = mesh.faces
    n = mesh.n_vertices
    e = np.sort(f[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
    uniq, inv = np.unique(e, axis=0, return_inverse=True)
    inv = inv.reshape(-1, 3) + n
    mid = 0.5 * (mesh.vertices[uniq[:, 0]] + mesh.vertices[uniq[:, 1]])
    if mesh.spherical:
        mid /= np.linalg.norm(mid, axis=1, keepdims=True)
    a, b, c = f[:, 0], f[:, 1], f[:, 2]
    ab, bc, ca = inv[:, 0], inv[:, 1], inv[:, 2]
    children = np.stack([
        np.stack([a, ab, ca], 1),
        np.stack([ab, b, bc], 1),
        np.stack([ca, bc, c], 1),
        np.stack([ab, bc, ca], 1),
    ], axis=1).reshape(-1, 3)
    pids = [p for p in mesh.face_pids for _ in range(4)]
    fine = SurfaceMesh(np.vstack([mesh.vertices, mid]), children, pids,
                       closed=True if mesh.closed else None,
                       spherical=mesh.spherical, meta=dict(mesh.meta))
    return fine, CorrespondenceMap(_frozen(np.arange(n)))


def _grid_faces(index, nx, ny, flip=False, corner_diag=True):
    """Triangulate an ``nx`` by ``ny`` vertex grid; ``index(i, j)`` gives vertex ids."""
    faces = []
    for i in range(nx - 1):
        for j in range(ny - 1):
            a, b, c, d = index(i, j), index(i + 1, j), index(i + 1, j + 1), index(i, j + 1)
            # quads touching the (max, 0) and (0, max) corners take the other diagonal
            alt = corner_diag and ((i == nx - 2 and j == 0) or (i == 0 and j == ny - 2))
            tris = [(a, b, d), (b, c, d)] if alt else [(a, b, c), (a, c, d)]
            for t in tris:
                faces.append(t[::-1] if flip else t)
    return faces


def gen_thin_plate(gap, nx, ny):
    """Two parallel unit sheets ``gap`` apart, joined along the ``x = 1`` edge.

    Upper sheet vertex ``(i, j)`` has index ``i * ny + j``; the lower sheet
    follows with offset ``nx * ny``.
    """
    if not gap > 0:
        raise ParameterError("gap must be positive")
    if nx < 2 or ny < 2:
        raise ParameterError("nx and ny must be at least 2")
    xs = np.linspace(0.0, 1.0, nx)
    ys = np.linspace(0.0, 1.0, ny)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    upper = np.stack([gx.ravel(), gy.ravel(), np.full(nx * ny, float(gap))], 1)
    lower = np.stack([gx.ravel(), gy.ravel(), np.zeros(nx * ny)], 1)
    off = nx * ny
    up = _grid_faces(lambda i, j: i * ny + j, nx, ny, corner_diag=False)
    lo = _grid_faces(lambda i, j: off + i * ny + j, nx, ny, flip=True, corner_diag=False)
    joint = []
    i = nx - 1
    for j in range(ny - 1):
        u0, u1 = i * ny + j, i * ny + j + 1
        l0, l1 = off + u0, off + u1
        joint += [(u0, l0, l1), (u0, l1, u1)]
    faces = up + lo + joint
    pids = ["sheet_upper"] * len(up) + ["sheet_lower"] * len(lo) + ["joint"] * len(joint)
    return SurfaceMesh(np.vstack([upper, lower]), faces, pids,
                       meta={"kind": "thin_plate", "gap": float(gap), "nx": nx, "ny": ny})


def _smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


def half_thickness(s, v):
    """Half-thickness of the wing/flap body at chordwise ``s`` and spanwise ``v``."""
    total = MAIN_CHORD + FLAP_CHORD
    phi = _smoothstep(s / CHORD_RAMP) * _smoothstep((total - s) / CHORD_RAMP)
    psi = _smoothstep(v / SPAN_RAMP) * _smoothstep((SPAN - v) / SPAN_RAMP)
    return 0.5 * THICKNESS * phi * psi


def gen_wing_flap(alpha, resolution):
    """Closed thin wing: flat main plate plus a flap hinged at ``x = 1``.

    The flap is rotated by ``alpha`` degrees about the hinge line (positive
    alpha raises the trailing edge). Upper and lower skins share their
    perimeter vertices and are separated by a smooth thickness profile that
    vanishes at the perimeter. Faces are PID "main" then "flap".
    """
    lo, hi = ALPHA_RANGE
    if not lo <= alpha <= hi:
        raise ParameterError(f"alpha {alpha} outside [{lo}, {hi}] degrees")
    if resolution < 4 or int(resolution) != resolution:
        raise ParameterError("resolution must be an integer >= 4")
    res = int(resolution)
    n_main, n_flap, nv = 5 * res, 2 * res, 2 * res
    nc = n_main + n_flap
    s = np.concatenate([np.linspace(0, MAIN_CHORD, n_main + 1),
                        MAIN_CHORD + np.linspace(0, FLAP_CHORD, n_flap + 1)[1:]])
    v = np.linspace(0, SPAN, nv + 1)
    a = math.radians(alpha)
    ca, sa = math.cos(a), math.sin(a)
    gs, gv = np.meshgrid(s, v, indexing="ij")
    beyond = gs - MAIN_CHORD
    flap = beyond > 0
    mx = np.where(flap, MAIN_CHORD + beyond * ca, gs)
    mz = np.where(flap, beyond * sa, 0.0)
    nx_ = np.where(flap, -sa, 0.0)
    nz_ = np.where(flap, ca, 1.0)
    h = half_thickness(gs, gv)
    hinge = np.isclose(gs, MAIN_CHORD)
    # mitred offset along the bisector at the hinge keeps the skin thickness
    nx_ = np.where(hinge, -math.sin(a / 2) / math.cos(a / 2), nx_)
    nz_ = np.where(hinge, 1.0, nz_)

    def point(sign):
        return np.stack([mx + sign * h * nx_, gv, mz + sign * h * nz_], -1)

    upper = point(1.0)
    lower = point(-1.0)
    grid_id = np.arange((nc + 1) * (nv + 1)).reshape(nc + 1, nv + 1)
    interior = np.zeros_like(grid_id, dtype=bool)
    interior[1:-1, 1:-1] = True
    lower_id = grid_id.copy()
    n_up = grid_id.size
    lower_id[interior] = n_up + np.arange(interior.sum())
    verts = np.vstack([upper.reshape(-1, 3), lower[interior].reshape(-1, 3)])
    up = _grid_faces(lambda i, j: grid_id[i, j], nc + 1, nv + 1)
    low = _grid_faces(lambda i, j: lower_id[i, j], nc + 1, nv + 1, flip=True)
    faces = np.array(up + low)
    # main faces first, flap faces second
    is_flap = np.array([i >= n_main for i in range(nc) for _ in range(nv) for _ in range(2)] * 2)
    order = np.concatenate([np.flatnonzero(~is_flap), np.flatnonzero(is_flap)])
    pids = ["flap" if is_flap[k] else "main" for k in order]
    return SurfaceMesh(verts, faces[order], pids, closed=True,
                       meta={"kind": "wing_flap", "alpha_deg": float(alpha), "resolution": res})


def wing_flap_coords(points, alpha):
    """Invert the wing/flap construction: return ``(s, v, offset)`` per point.

    ``s`` is the chordwise parameter along the mean line, ``v`` the span
    coordinate and ``offset`` the signed distance from the mean line along the
    section normal (positive on the upper skin).
    """
    p = np.asarray(points, dtype=float)
    a = math.radians(alpha)
    ca, sa = math.cos(a), math.sin(a)
    dx = p[..., 0] - MAIN_CHORD
    z = p[..., 2]
    # split along the hinge bisector plane
    side = dx * math.cos(a / 2) + z * math.sin(a / 2)
    flap = side > 0
    s = np.where(flap, MAIN_CHORD + dx * ca + z * sa, p[..., 0])
    off = np.where(flap, -dx * sa + z * ca, z)
    return s, p[..., 1], off

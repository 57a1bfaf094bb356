"""Invariant suites run by ``gist-mini verify``.

Every check yields a :class:`Check`; ``str(check)`` is a single
``key=value`` line suitable for grepping or machine parsing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import datagen as dg
from . import loads as ld
from . import operator as op
from .meshgraph import (
    SurfaceMesh,
    build_graph,
    complete_graph,
    cycle_graph,
    gen_icosphere,
    gen_thin_plate,
    gen_wing_flap,
    path_graph,
    random_walk_matrix,
)
from .spectral import (
    DEFAULT_FILTER,
    eigen_kernel_from_basis,
    exact_kernel,
    kernel_estimates,
    loglog_slope,
    mismatch_curve,
    random_gauge,
    spectral_embed,
    symmetric_eigenpairs,
)

SUITES = ("gauge", "unbiased", "mismatch", "thinwall", "gradcheck", "loads")


@dataclass
class Check:
    name: str
    passed: bool
    values: dict = field(default_factory=dict)

    def __str__(self):
        parts = [f"check={self.name}", f"status={'pass' if self.passed else 'fail'}"]
        for k, v in self.values.items():
            parts.append(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}")
        return " ".join(parts)


# ---------------------------------------------------------------------------


def gauge_suite(seed=0, rotations=20, tol=1e-10):
    rng = np.random.default_rng(seed)
    graphs = {"c4": cycle_graph(4), "c6": cycle_graph(6), "icosahedron": build_graph(gen_icosphere(0))}
    out = []
    for name, g in graphs.items():
        mu, U = symmetric_eigenpairs(g)
        ref = eigen_kernel_from_basis(mu, U, DEFAULT_FILTER)
        worst = 0.0
        for _ in range(rotations):
            V = random_gauge(mu, U, rng)
            worst = max(worst, float(np.abs(eigen_kernel_from_basis(mu, V, DEFAULT_FILTER) - ref).max()))
        out.append(Check(f"gauge.{name}", worst <= tol, {"max_diff": worst, "limit": tol}))
    return out


def unbiased_graphs():
    """The five small graphs used for the unbiasedness check."""
    return {
        "path3": path_graph(3),
        "complete3": complete_graph(3),
        "cycle4": cycle_graph(4),
        "cycle6": cycle_graph(6),
        "icosahedron": build_graph(gen_icosphere(0)),
    }


def unbiased_suite(seed=0, seeds=500, r=64, r_grid=(64, 256, 1024, 4096), rate_seeds=100,
                   n_se=3.0, slope_range=(-0.6, -0.4)):
    """Seed-averaged estimates against the exact kernel, and the error rate in ``r``.

    The standard error of each pair's mean uses the exact Gaussian variance
    ``(K_ii K_jj + K_ij^2) / r`` of a single estimate.
    """
    out = []
    for name, g in unbiased_graphs().items():
        P = random_walk_matrix(g)
        K = exact_kernel(P, DEFAULT_FILTER)
        iu = np.stack(np.triu_indices(g.n), 1)
        est = np.array([kernel_estimates(spectral_embed(P, DEFAULT_FILTER, r, seed + s), iu)
                        for s in range(seeds)])
        kij = K[iu[:, 0], iu[:, 1]]
        var = (K[iu[:, 0], iu[:, 0]] * K[iu[:, 1], iu[:, 1]] + kij ** 2) / r
        se = np.sqrt(var / seeds)
        z = np.abs(est.mean(axis=0) - kij) / se
        out.append(Check(f"unbiased.{name}", bool(np.all(z <= n_se)),
                         {"pairs": len(iu), "max_z": float(z.max()), "limit": n_se}))
    P = random_walk_matrix(unbiased_graphs()["icosahedron"])
    K = exact_kernel(P, DEFAULT_FILTER)
    iu = np.stack(np.triu_indices(P.n), 1)
    truth = K[iu[:, 0], iu[:, 1]]
    errs = []
    for rr in r_grid:
        sq = [np.mean((kernel_estimates(spectral_embed(P, DEFAULT_FILTER, rr, seed + s), iu) - truth) ** 2)
              for s in range(rate_seeds)]
        errs.append(math.sqrt(float(np.mean(sq))))
    slope = loglog_slope(r_grid, errs)
    out.append(Check("unbiased.rate", slope_range[0] <= slope <= slope_range[1],
                     {"slope": slope, "low": slope_range[0], "high": slope_range[1]}))
    return out


def mismatch_suite(levels=(1, 2, 3)):
    curve = mismatch_curve(levels, DEFAULT_FILTER, oracle=True)
    vals = [d for _, d in curve]
    dec = all(b < a for a, b in zip(vals, vals[1:]))
    out = [Check("mismatch.decreasing", dec,
                 {f"n{n}": d for n, d in curve})]
    ident = mismatch_curve(levels, (1.0,), oracle=True)
    out.append(Check("mismatch.identity_filter", all(d == 0 for _, d in ident),
                     {"max": max(d for _, d in ident)}))
    return out


def thin_wall_pairs(nx=16, ny=16, margin=5):
    """(upper, lower) vertex pairs of the thin plate's interior."""
    return [(i * ny + j, i * ny + j + nx * ny)
            for i in range(margin, nx - margin) for j in range(margin, ny - margin)]


def thinwall_suite(gap=0.01, nx=16, ny=16, ratio=0.1):
    mesh = gen_thin_plate(gap, nx, ny)
    g = build_graph(mesh)
    K = exact_kernel(random_walk_matrix(g), DEFAULT_FILTER)
    worst = 0.0
    for up, down in thin_wall_pairs(nx, ny):
        near = min(K[up, k] for k in g.neighbors(up))
        worst = max(worst, K[up, down] / near)
    hops = g.distances_from(thin_wall_pairs(nx, ny)[0][0])[thin_wall_pairs(nx, ny)[0][1]]
    return [Check("thinwall.separation", worst <= ratio, {"max_ratio": worst, "limit": ratio}),
            Check("thinwall.topology", hops >= nx, {"hops": int(hops), "min_hops": nx})]


def gradcheck_suite(seeds=5, tol=1e-5, level=1):
    mesh = gen_icosphere(level)
    out = []
    for seed in range(seeds):
        rng = np.random.default_rng(seed)
        model = op.init_model(hidden=8, blocks=2, k=6, seed=seed, r=32)
        sample = op.make_sample(mesh, rng.standard_normal(5), rng.standard_normal((mesh.n_vertices, 4)))
        emb, attn = op.prepare(model, mesh)
        err = op.gradient_check(model, sample, emb, attn)
        out.append(Check(f"gradcheck.seed{seed}", err <= tol,
                         {"n": mesh.n_vertices, "max_rel_err": err, "limit": tol}))
    return out


def unit_cube():
    v = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=float)
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    faces = []
    for a, b, c, d in quads:
        faces += [(a, b, c), (a, c, d)]
    return SurfaceMesh(v, faces, ["cube"] * 12)


def loads_suite(tol_oracle=0.01):
    out = []
    cube = unit_cube()
    p = 100.0
    el = ld.element_loads(cube, np.tile([p, 0, 0, 0], (8, 1)).astype(float),
                          ld.FlowConstants(origin=(0.2, 0.3, -0.1)))
    scale = p * el.area.sum()
    net = max(float(np.abs(el.force.sum(0)).max()), float(np.abs(el.moment.sum(0)).max())) / scale
    out.append(Check("loads.closed_cube", net <= 1e-9, {"rel_net": net, "limit": 1e-9}))
    q = ld.FlowConstants().q_inf
    out.append(Check("loads.q_inf", q == 1531.25, {"q_inf": q}))

    tri = SurfaceMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]], ["panel"])
    f = ld.element_loads(tri, np.tile([10.0, 1, 0, 0], (3, 1))).force[0]
    out.append(Check("loads.triangle_panel", bool(np.array_equal(f, [0.5, 0.0, 5.0])),
                     {"fx": float(f[0]), "fz": float(f[2])}))
    s = math.sqrt(2.0)
    sq = SurfaceMesh(np.array([[0, 0, 0], [s, 0, 0], [s, s, 0], [0, s, 0]]) + [1 - s / 2, -s / 2, 0],
                     [[0, 1, 2], [0, 2, 3]], ["panel"] * 2)
    el = ld.element_loads(sq, np.tile([10.0, 0, 0, 0], (4, 1)))
    fsum, msum = el.force.sum(0), el.moment.sum(0)
    ok = np.allclose(fsum, [0, 0, 20], rtol=0, atol=1e-12) and np.allclose(msum, [0, -20, 0], rtol=0, atol=1e-12)
    out.append(Check("loads.square_panel_moment", bool(ok), {"fz": float(fsum[2]), "my": float(msum[1])}))
    cz = ld.coefficients(sq, np.tile([3062.5 / 2, 0, 0, 0], (4, 1))).czs
    out.append(Check("loads.czs_from_force", abs(cz - 2.0) <= 1e-12, {"czs": cz}))

    worst = 0.0
    for alpha in (-2.0, 0.0, 1.5, 3.0):
        mesh = gen_wing_flap(alpha, dg.DEFAULT_RESOLUTION)
        for mp in dg.DEFAULT_MAP_POINTS:
            const = ld.FlowConstants().with_yaw(mp.yaw)
            got = ld.coefficients(mesh, dg.manufactured_fields(mesh, mp, const), const)
            ref = dg.quadrature_coefficients(mesh, lambda pts: dg.fields_at(pts, alpha, mp, const), const)
            for name in ("cxs", "czs"):
                worst = max(worst, abs(getattr(got, name) / getattr(ref, name) - 1))
    out.append(Check("loads.quadrature_oracle", worst <= tol_oracle, {"max_rel_err": worst, "limit": tol_oracle}))
    return out


_RUNNERS = {
    "gauge": gauge_suite,
    "unbiased": unbiased_suite,
    "mismatch": mismatch_suite,
    "thinwall": thinwall_suite,
    "gradcheck": gradcheck_suite,
    "loads": loads_suite,
}


def run_suite(name, seed=0):
    """Run one suite (or ``all``) and return its checks."""
    if name == "all":
        return [c for s in SUITES for c in run_suite(s, seed)]
    if name not in _RUNNERS:
        raise KeyError(name)
    if name in ("gauge", "unbiased"):
        return _RUNNERS[name](seed=seed)
    return _RUNNERS[name]()

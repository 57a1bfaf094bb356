"""Surface load integration, aerodynamic coefficients, field metrics and PID reports."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateFaceError, ParameterError, ReportError, ShapeError, UndefinedR2Error

RHO_INF = 1.225  # kg/m^3
V_INF = 50.0  # m/s

COEFF_NAMES = ("cxs", "cys", "czs", "cmxs", "cmys", "cmzs")


def wind_basis(yaw_deg=0.0):
    """Body axes rotated about z by ``yaw_deg``; rows are e_x, e_y, e_z (wind)."""
    psi = math.radians(yaw_deg)
    c, s = math.cos(psi), math.sin(psi)
    return np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class FlowConstants:
    rho: float = RHO_INF
    velocity: float = V_INF
    l_ref: float = 1.0
    origin: tuple = (0.0, 0.0, 0.0)
    basis: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        if not (self.rho > 0 and self.velocity > 0 and self.l_ref > 0):
            raise ParameterError("rho, velocity and l_ref must be positive")
        b = np.asarray(self.basis, dtype=float)
        if b.shape != (3, 3) or np.abs(b @ b.T - np.eye(3)).max() > 1e-12:
            raise ParameterError("wind basis must be three orthonormal rows")
        object.__setattr__(self, "basis", b)
        object.__setattr__(self, "origin", tuple(float(x) for x in self.origin))

    @property
    def q_inf(self):
        return 0.5 * self.rho * self.velocity ** 2

    def with_yaw(self, yaw_deg):
        return FlowConstants(self.rho, self.velocity, self.l_ref, self.origin, wind_basis(yaw_deg))

    def to_dict(self):
        return {"rho": self.rho, "velocity": self.velocity, "l_ref": self.l_ref,
                "origin": list(self.origin), "basis": self.basis.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["rho"], d["velocity"], d["l_ref"], tuple(d["origin"]), np.array(d["basis"]))


@dataclass(frozen=True)
class ElementLoad:
    pressure: float
    shear: np.ndarray
    normal: np.ndarray
    area: float
    centroid: np.ndarray
    force: np.ndarray
    moment: np.ndarray


@dataclass(frozen=True, eq=False)
class ElementLoads:
    """Per-face loads stored column-wise; indexing yields an :class:`ElementLoad`."""

    pressure: np.ndarray
    shear: np.ndarray
    normal: np.ndarray
    area: np.ndarray
    centroid: np.ndarray
    force: np.ndarray
    moment: np.ndarray
    pids: tuple

    def __len__(self):
        return len(self.area)

    def __getitem__(self, k):
        return ElementLoad(self.pressure[k], self.shear[k], self.normal[k], self.area[k],
                           self.centroid[k], self.force[k], self.moment[k])


def element_loads(mesh, fields, constants=None):
    """Force ``F = (p n + tau) A`` and moment ``(c - r0) x F`` for every face.

    Representative face values are the arithmetic mean of the three vertex
    values; ``fields`` columns are ``p, taux, tauy, tauz``.
    """
    constants = constants or FlowConstants()
    fields = np.asarray(fields, dtype=float)
    if fields.shape != (mesh.n_vertices, 4):
        raise ShapeError(f"fields shape {fields.shape} != ({mesh.n_vertices}, 4)")
    f = mesh.faces
    cr = mesh._cross()
    norm = np.linalg.norm(cr, axis=1)
    bad = np.flatnonzero(norm <= 0)
    if len(bad):
        raise DegenerateFaceError(int(bad[0]), "zero-area face in integration")
    area = 0.5 * norm
    normal = cr / norm[:, None]
    vals = fields[f].mean(axis=1)
    p, tau = vals[:, 0], vals[:, 1:]
    centroid = mesh.vertices[f].mean(axis=1)
    force = (p[:, None] * normal + tau) * area[:, None]
    moment = np.cross(centroid - np.asarray(constants.origin), force)
    return ElementLoads(p, tau, normal, area, centroid, force, moment, mesh.face_pids)


@dataclass(frozen=True)
class AeroCoefficients:
    """Whole-body coefficients plus the per-PID breakdown (units m^2)."""

    total: dict
    per_pid: dict

    def __getattr__(self, name):
        if name in COEFF_NAMES:
            return self.total[name]
        raise AttributeError(name)


def integrate_coefficients(loads, constants=None, pids=None):
    """Resolve summed forces/moments in the wind frame and normalize by ``q_inf``.

    Totals are accumulated from the per-PID sums in PID order so that the
    breakdown adds up to the total exactly.
    """
    constants = constants or FlowConstants()
    pids = np.array(loads.pids if pids is None else pids, dtype=object)
    if len(pids) != len(loads):
        raise ShapeError("one PID per element required")
    q = constants.q_inf
    fw = loads.force @ constants.basis.T
    mw = loads.moment @ constants.basis.T
    per = {}
    for pid in dict.fromkeys(pids.tolist()):
        sel = pids == pid
        cf = [math.fsum(fw[sel, k]) / q for k in range(3)]
        cm = [math.fsum(mw[sel, k]) / (q * constants.l_ref) for k in range(3)]
        per[pid] = dict(zip(COEFF_NAMES, cf + cm))
    total = {name: math.fsum(d[name] for d in per.values()) for name in COEFF_NAMES}
    return AeroCoefficients(total, per)


def coefficients(mesh, fields, constants=None):
    return integrate_coefficients(element_loads(mesh, fields, constants), constants)


def field_metrics(pred, truth):
    """Return ``(mse, r2)``; raises :class:`UndefinedR2Error` for constant truth."""
    pred = np.asarray(pred, dtype=float).ravel()
    truth = np.asarray(truth, dtype=float).ravel()
    if pred.shape != truth.shape:
        raise ShapeError(f"length mismatch {pred.shape} vs {truth.shape}")
    res = truth - pred
    mse = float(np.mean(res ** 2))
    ss_tot = float(np.sum((truth - truth.mean()) ** 2))
    if ss_tot == 0.0:
        raise UndefinedR2Error(mse)
    return mse, 1.0 - float(np.sum(res ** 2)) / ss_tot


@dataclass(frozen=True)
class PidRow:
    pid: str
    cxs_pred: float
    cxs_true: float
    abs_err: float
    usable: bool
    replace: bool


@dataclass(frozen=True)
class PidReport:
    rows: tuple
    usability: float
    cfd_replacement: float

    @property
    def n_usable(self):
        return sum(r.usable for r in self.rows)

    @property
    def n_replace(self):
        return sum(r.replace for r in self.rows)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["pid", "cxs_pred", "cxs_true", "abs_err", "usable", "replace"])
        for r in self.rows:
            w.writerow([r.pid, f"{r.cxs_pred:.17g}", f"{r.cxs_true:.17g}", f"{r.abs_err:.17g}",
                        str(r.usable).lower(), str(r.replace).lower()])
        return buf.getvalue()


def pid_report(pred, truth, usability, cfd_replacement):
    """Per-PID absolute drag-coefficient error against two thresholds."""
    if not 0 < cfd_replacement <= usability:
        raise ParameterError("thresholds must satisfy 0 < cfd_replacement <= usability")
    a, b = set(pred.per_pid), set(truth.per_pid)
    if a != b:
        raise ReportError(f"PID sets differ: only predicted {sorted(a - b)}, only true {sorted(b - a)}")
    rows = []
    for pid in truth.per_pid:
        cp, ct = pred.per_pid[pid]["cxs"], truth.per_pid[pid]["cxs"]
        err = abs(cp - ct)
        rows.append(PidRow(pid, cp, ct, err, err <= usability, err <= cfd_replacement))
    return PidReport(tuple(rows), usability, cfd_replacement)


# ---------------------------------------------------------------------------
# field CSV


def write_fields(fields):
    fields = np.asarray(fields, dtype=float)
    buf = io.StringIO()
    buf.write("vertex_id,p,taux,tauy,tauz\n")
    for i, row in enumerate(fields):
        buf.write(f"{i}," + ",".join(f"{x:.17g}" for x in row) + "\n")
    return buf.getvalue()


def read_fields(text, n_vertices=None):
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or [c.strip() for c in rows[0]] != ["vertex_id", "p", "taux", "tauy", "tauz"]:
        raise ParameterError("field file header must be vertex_id,p,taux,tauy,tauz")
    body = [r for r in rows[1:] if r]
    out = np.empty((len(body), 4))
    seen = np.zeros(len(body), dtype=bool)
    for lineno, r in enumerate(body, start=2):
        if len(r) != 5:
            raise ParameterError(f"line {lineno}: expected 5 columns")
        i = int(r[0])
        if not 0 <= i < len(body) or seen[i]:
            raise ParameterError(f"line {lineno}: bad or repeated vertex id {i}")
        seen[i] = True
        out[i] = [float(x) for x in r[1:]]
    if n_vertices is not None and len(out) != n_vertices:
        raise ShapeError(f"{len(out)} field rows for {n_vertices} vertices")
    return out

"""Manufactured-solution datasets on the wing/flap geometry.

Every field here is an analytic function of the surface point, the flap
angle and the map point, so integrated loads have exact references. The
constants are artifact-defined; they are not measured values.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass

import numpy as np

from . import loads as ld
from .errors import GenerationError, ParameterError
from .meshgraph import (
    ALPHA_RANGE,
    FLAP_CHORD,
    MAIN_CHORD,
    THICKNESS,
    gen_wing_flap,
    save_mesh,
    subdivide,
    wing_flap_coords,
)

MANIFEST_VERSION = "gist-dataset-1"
DEFAULT_RESOLUTION = 4
ORACLE_FACTOR = 4

# flap loading
CP0 = 0.8
ALPHA0 = 1.5  # deg
FLAP_BASE = 1.5  # angle-independent part of the flap pressure jump, in q_inf
HINGE_BLEND = (0.9, 1.1)  # chordwise window where flap loading switches on
# shear
TAU0 = 2.0  # Pa
SHEAR_SLOPE = 0.05  # per degree
# main plate
LE_SUCTION = 1.3  # in q_inf
LE_WIDTH = 0.2  # m
FLOOR_LOAD = 0.25  # in q_inf
FLOOR_CENTER = (0.5, 0.25)
FLOOR_WIDTH = (0.3, 0.15)
PITCH_GAIN = 0.1  # per degree
HEAVE_GAIN = -5.0  # per meter

MAP_RANGES = {
    "heave": (-0.02, 0.02),
    "pitch": (-1.0, 1.0),
    "yaw": (-3.0, 3.0),
    "roll": (-2.0, 2.0),
    "steer": (-10.0, 10.0),
}


@dataclass(frozen=True)
class MapPoint:
    name: str
    heave: float = 0.0
    pitch: float = 0.0
    yaw: float = 0.0
    roll: float = 0.0
    steer: float = 0.0

    def __post_init__(self):
        for key, (lo, hi) in MAP_RANGES.items():
            val = getattr(self, key)
            if not lo <= val <= hi:
                raise ParameterError(f"map point {self.name}: {key}={val} outside [{lo}, {hi}]")

    def vector(self):
        return np.array([self.heave, self.pitch, self.yaw, self.roll, self.steer])


DEFAULT_MAP_POINTS = (
    MapPoint("straight_nominal"),
    MapPoint("straight_braking", heave=-0.012, pitch=-0.6),
    MapPoint("straight_high_speed", heave=-0.015, pitch=0.3),
    MapPoint("corner_slow", heave=0.006, pitch=0.4, yaw=2.0, roll=0.6, steer=8.0),
    MapPoint("corner_medium", heave=-0.004, pitch=0.1, yaw=1.5, roll=0.9, steer=4.0),
    MapPoint("corner_fast", heave=-0.010, pitch=-0.2, yaw=0.8, roll=1.2, steer=1.5),
)


def map_point(name):
    for mp in DEFAULT_MAP_POINTS:
        if mp.name == name:
            return mp
    raise ParameterError(f"unknown map point {name!r}")


def _smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


def flap_jump(alpha, constants=None):
    """Lower-minus-upper flap pressure jump (Pa) away from the skin edges."""
    q = (constants or ld.FlowConstants()).q_inf
    return q * (FLAP_BASE + CP0 * math.tanh(alpha / ALPHA0))


def pressure_at(s, v, side, alpha, mp, constants=None):
    """Manufactured pressure from wing coordinates; ``side`` is +1 upper, -1 lower."""
    q = (constants or ld.FlowConstants()).q_inf
    mod = 1.0 + PITCH_GAIN * mp.pitch + HEAVE_GAIN * mp.heave
    on_flap = _smoothstep((s - HINGE_BLEND[0]) / (HINGE_BLEND[1] - HINGE_BLEND[0]))
    le = -LE_SUCTION * np.exp(-(s / LE_WIDTH) ** 2)
    bump = np.exp(-((s - FLOOR_CENTER[0]) / FLOOR_WIDTH[0]) ** 2
                  - ((v - FLOOR_CENTER[1]) / FLOOR_WIDTH[1]) ** 2)
    floor = FLOOR_LOAD * bump * (1.0 - on_flap) * 0.5 * (1.0 - side)
    flap = -0.5 * side * on_flap * (FLAP_BASE + CP0 * math.tanh(alpha / ALPHA0))
    return q * (mod * (le + floor) + flap)


def fields_at(points, alpha, mp, constants=None):
    """Evaluate ``p, taux, tauy, tauz`` at arbitrary surface points."""
    s, v, off = wing_flap_coords(points, alpha)
    side = np.clip(off / (0.5 * THICKNESS), -1.0, 1.0)
    p = pressure_at(s, v, side, alpha, mp, constants)
    out = np.zeros(np.shape(s) + (4,))
    out[..., 0] = p
    out[..., 1] = TAU0 * (1.0 + SHEAR_SLOPE * alpha)
    return out


def estimate_alpha(mesh):
    """Recover the flap angle from the trailing edge, where the skin thickness
    vanishes and the surface sits on the flap chord line through the hinge."""
    pids = np.array(mesh.face_pids, dtype=object)
    idx = np.unique(mesh.faces[pids == "flap"])
    if len(idx) < 3:
        raise GenerationError("cannot recover flap angle: too few flap vertices")
    dx = mesh.vertices[idx, 0] - MAIN_CHORD
    dz = mesh.vertices[idx, 2]
    k = np.argmax(dx * dx + dz * dz)
    return math.degrees(math.atan2(dz[k], dx[k]))


def manufactured_fields(mesh, mp, constants=None, alpha=None):
    """Per-vertex ``(N, 4)`` manufactured fields on a wing/flap mesh."""
    missing = {"main", "flap"} - set(mesh.face_pids)
    if missing:
        raise GenerationError(f"mesh lacks PIDs {sorted(missing)}")
    if alpha is None:
        alpha = mesh.meta.get("alpha_deg")
    if alpha is None:
        alpha = estimate_alpha(mesh)
    return fields_at(mesh.vertices, alpha, mp, constants)


def analytic_coefficients(alpha, mp, resolution=DEFAULT_RESOLUTION * ORACLE_FACTOR, constants=None):
    """Ground-truth coefficients from manufactured fields on a fine mesh.

    The wind frame follows the map point's yaw. Returns the full
    :class:`AeroCoefficients`; ``.cxs`` and ``.czs`` are the sweep quantities.
    """
    constants = (constants or ld.FlowConstants()).with_yaw(mp.yaw)
    mesh = gen_wing_flap(alpha, resolution)
    return ld.coefficients(mesh, manufactured_fields(mesh, mp, constants, alpha), constants)


_QUAD = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])


def quadrature_coefficients(mesh, field_fn, constants=None, levels=1):
    """Independent load oracle: 3-point quadrature of ``field_fn`` on a refined mesh.

    ``field_fn(points)`` returns ``(..., 4)`` field values at surface points.
    """
    constants = constants or ld.FlowConstants()
    fine = mesh
    for _ in range(levels):
        fine, _ = subdivide(fine)
    tri = fine.vertices[fine.faces]
    cr = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    area = 0.5 * np.linalg.norm(cr, axis=1)
    normal = cr / (2 * area[:, None])
    qp = np.einsum("qk,fkd->fqd", _QUAD, tri)
    vals = field_fn(qp)
    force_density = vals[..., :1] * normal[:, None, :] + vals[..., 1:]
    force_q = force_density * (area[:, None, None] / 3.0)
    moment_q = np.cross(qp - np.asarray(constants.origin), force_q)
    force = force_q.sum(axis=1)
    moment = moment_q.sum(axis=1)
    el = ld.ElementLoads(vals[:, :, 0].mean(1), vals[:, :, 1:].mean(1), normal, area,
                         tri.mean(1), force, moment, fine.face_pids)
    return ld.integrate_coefficients(el, constants)


# ---------------------------------------------------------------------------
# datasets


@dataclass(frozen=True)
class Sample:
    config_id: int
    alpha_deg: float
    map_point: str
    mesh_path: str
    fields_path: str
    split: str


@dataclass(frozen=True)
class DatasetManifest:
    seed: int
    resolution: int
    configurations: tuple
    map_points: tuple
    samples: tuple
    constants: ld.FlowConstants
    version: str = MANIFEST_VERSION

    def to_json(self):
        doc = {
            "version": self.version,
            "seed": self.seed,
            "resolution": self.resolution,
            "configurations": list(self.configurations),
            "constants": self.constants.to_dict(),
            "map_points": [asdict(mp) for mp in self.map_points],
            "samples": [asdict(s) for s in self.samples],
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(
            seed=d["seed"],
            resolution=d["resolution"],
            configurations=tuple(d["configurations"]),
            map_points=tuple(MapPoint(**m) for m in d["map_points"]),
            samples=tuple(Sample(**s) for s in d["samples"]),
            constants=ld.FlowConstants.from_dict(d["constants"]),
            version=d["version"],
        )

    def split(self, name):
        return [s for s in self.samples if s.split == name]

    def map_point(self, name):
        return next(m for m in self.map_points if m.name == name)

    def training_alpha_range(self):
        a = [s.alpha_deg for s in self.split("train")]
        return min(a), max(a)


def assign_splits(n_configs, seed, fractions=(0.7, 0.15, 0.15)):
    """Split configuration indices; the two end configurations always train.

    Keeping the extremes in training means held-out configurations are
    interpolations of the trained range. When possible no two held-out
    configurations are neighbours, so every held-out point is bracketed by
    trained ones on both sides.
    """
    if n_configs < 2:
        raise ParameterError("need at least two configurations")
    n_train = max(2, int(round(fractions[0] * n_configs)))
    n_val = int(round(fractions[1] * n_configs))
    n_val = min(n_val, n_configs - n_train)
    n_held = n_configs - n_train
    rng = np.random.default_rng(seed)
    inner = np.arange(1, n_configs - 1)
    if n_held <= (len(inner) + 1) // 2:
        # choose n_held non-adjacent slots: place gaps uniformly then spread
        picks = np.sort(rng.choice(len(inner) - n_held + 1, size=n_held, replace=False))
        held = inner[picks + np.arange(n_held)]
    else:
        held = rng.choice(inner, size=n_held, replace=False)
    held = rng.permutation(held)
    split = ["train"] * n_configs
    for i in held[:n_val]:
        split[i] = "val"
    for i in held[n_val:]:
        split[i] = "test"
    return split


def generate_dataset(out_dir, n_configs=10, alpha_range=(-2.0, 3.0), map_points=DEFAULT_MAP_POINTS,
                     seed=0, resolution=DEFAULT_RESOLUTION, constants=None):
    """Write meshes, field files and ``manifest.json`` under ``out_dir``."""
    constants = constants or ld.FlowConstants()
    lo, hi = alpha_range
    if not (ALPHA_RANGE[0] <= lo < hi <= ALPHA_RANGE[1]):
        raise ParameterError(f"alpha range {alpha_range} outside geometry bounds {ALPHA_RANGE}")
    if len(map_points) != 6:
        raise ParameterError("exactly six map points per configuration")
    if len({m.name for m in map_points}) != len(map_points):
        raise ParameterError("map point names must be unique")
    alphas = [float(a) for a in np.round(np.linspace(lo, hi, n_configs), 12)]
    splits = assign_splits(n_configs, seed)
    os.makedirs(out_dir, exist_ok=True)
    samples = []
    for cid, alpha in enumerate(alphas):
        mesh = gen_wing_flap(alpha, resolution)
        mesh_name = f"config_{cid:03d}.obj"
        with open(os.path.join(out_dir, mesh_name), "w", newline="\n") as fh:
            fh.write(save_mesh(mesh))
        for mp in map_points:
            fields = manufactured_fields(mesh, mp, constants, alpha)
            fields_name = f"config_{cid:03d}_{mp.name}.csv"
            with open(os.path.join(out_dir, fields_name), "w", newline="\n") as fh:
                fh.write(ld.write_fields(fields))
            samples.append(Sample(cid, alpha, mp.name, mesh_name, fields_name, splits[cid]))
    manifest = DatasetManifest(seed, resolution, tuple(alphas), tuple(map_points), tuple(samples), constants)
    with open(os.path.join(out_dir, "manifest.json"), "w", newline="\n") as fh:
        fh.write(manifest.to_json())
    return manifest


def load_manifest(path):
    with open(path) as fh:
        return DatasetManifest.from_json(fh.read())

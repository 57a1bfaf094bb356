"""Gauge-invariant spectral kernel attention on surface meshes, with
manufactured aerodynamic data, load integration and a small CLI."""

from .errors import GistError
from .loads import AeroCoefficients, FlowConstants, coefficients, element_loads, field_metrics, pid_report
from .meshgraph import (
    SurfaceMesh,
    build_graph,
    gen_icosphere,
    gen_thin_plate,
    gen_wing_flap,
    load_mesh,
    random_walk_matrix,
    save_mesh,
    subdivide,
)
from .spectral import DEFAULT_FILTER, FilterSpec, SpectralEmbedding, apply_filter, exact_kernel, kernel_estimate, spectral_embed

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_FILTER",
    "AeroCoefficients",
    "FilterSpec",
    "FlowConstants",
    "GistError",
    "SpectralEmbedding",
    "SurfaceMesh",
    "apply_filter",
    "build_graph",
    "coefficients",
    "element_loads",
    "exact_kernel",
    "field_metrics",
    "gen_icosphere",
    "gen_thin_plate",
    "gen_wing_flap",
    "kernel_estimate",
    "load_mesh",
    "pid_report",
    "random_walk_matrix",
    "save_mesh",
    "spectral_embed",
    "subdivide",
]

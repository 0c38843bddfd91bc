"""Spatial latent factor and Poisson spatially varying coefficient models."""

from ._core import (
    SpatialGraph,
    build_graph,
    compute_ice,
    fit_stage1,
    fit_stage2,
    icar_logdensity,
    make_lattice,
    morans_i,
    rate_ratio,
    run_cli,
    simulate_stage1,
    standardize,
)

__all__ = [
    "SpatialGraph",
    "build_graph",
    "compute_ice",
    "fit_stage1",
    "fit_stage2",
    "icar_logdensity",
    "make_lattice",
    "morans_i",
    "rate_ratio",
    "run_cli",
    "simulate_stage1",
    "standardize",
]

"""Spatially smoothed inclusion probabilities (SSIP) for areal regression.

The public entry points are the two samplers, :func:`fit_gaussian_ssip` and
:func:`fit_nb_ssip`, plus the capture-recapture helpers in :mod:`ssip.crc`.
"""

__version__ = "0.1.0"

from .chain import PosteriorChain, RunSettings, SamplerError
from .graph import AdjacencyGraph, GraphError, build_grid_graph, from_edge_list, read_edge_list
from .prior import ConfigError, SsipConfig
from .gaussian import GaussianHyper, RegionData, fit_gaussian_ssip
from .negbin import NbConfig, NbRegionData, fit_nb_ssip

__all__ = [
    "AdjacencyGraph", "ConfigError", "GaussianHyper", "GraphError", "NbConfig", "NbRegionData",
    "PosteriorChain", "RegionData", "RunSettings", "SamplerError", "SsipConfig",
    "build_grid_graph", "fit_gaussian_ssip", "fit_nb_ssip", "from_edge_list", "read_edge_list",
]

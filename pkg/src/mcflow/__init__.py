"""Spectral simulation of mean curvature flow for star-shaped graphs over S^1 and S^2.

The package evolves near-spherical hypersurfaces either in physical time or in
rescaled collapse variables, where the shrinking sphere becomes stationary and
the scale ``a`` and center ``z`` are modulated so the remaining perturbation
stays orthogonal to dilations and translations.
"""
from .curvature import OperatorContext, default_k, graph_speed, mean_curvature
from .modulation import Decomposition, decompose, find_center, find_scale
from .sphere import BasisTables, build_basis

__all__ = [
    "BasisTables", "build_basis", "OperatorContext", "default_k", "graph_speed",
    "mean_curvature", "Decomposition", "decompose", "find_center", "find_scale",
]
__version__ = "0.1.0"

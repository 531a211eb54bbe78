"""Entropic mirror descent, Beckmann route equilibrium and imitative logit dynamics."""

from .network import Network, NetworkError, enumerate_paths, load_network
from .mirror_descent import SimplexProduct, md_step_product, md_step_simplex, run_md
from .reference import EquilibriumCertificate, grid_equilibrium, md_refine, reference_equilibrium

__all__ = [
    "EquilibriumCertificate",
    "Network",
    "NetworkError",
    "SimplexProduct",
    "enumerate_paths",
    "grid_equilibrium",
    "load_network",
    "md_refine",
    "md_step_product",
    "md_step_simplex",
    "reference_equilibrium",
    "run_md",
]

__version__ = "0.1.0"

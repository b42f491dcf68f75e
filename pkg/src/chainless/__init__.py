"""Chainless Monte Carlo for lattice spin systems.

Independent weighted samples are drawn from a hierarchy of approximate
marginal densities on nested sublattices; no Markov chain is involved.
"""

__version__ = "0.1.0"

from .lattice import LatticeGeometry, LevelHierarchy, build_hierarchy  # noqa: E402
from .model import CouplingField, draw_disorder, ising_couplings  # noqa: E402
from .marginal import CoefficientTable, ExactMarginals  # noqa: E402
from .sampler import ChainlessSampler, WeightedBatch  # noqa: E402
from .bootstrap import BootstrapConfig, run_bootstrap  # noqa: E402

__all__ = [
    "LatticeGeometry", "LevelHierarchy", "build_hierarchy", "CouplingField", "draw_disorder",
    "ising_couplings", "CoefficientTable", "ExactMarginals", "ChainlessSampler", "WeightedBatch",
    "BootstrapConfig", "run_bootstrap", "__version__",
]

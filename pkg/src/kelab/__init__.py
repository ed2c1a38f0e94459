"""kelab: numerical Kähler-Einstein potentials on degenerating model fibers.

Solves (chi + i ddbar phi)^n = e^phi Omega_t on flat tori (n = 1, 2) and
annuli, and evaluates the pluripotential quantities attached to a
degenerating family: sublevel decay, capacity bounds, barrier C^0 bounds
and the Weil-Petersson potential.
"""
__version__ = "0.1.0"

from .geometry import (FamilyConfig, FiberGrid, HermitianForm, PoleSpec, VolumeDensity,  # noqa: E402
                       background_form, build_annulus_fiber, build_torus_fiber, family,
                       integrate, volume_density)
from .solver import (BoundaryDataMissing, KahlerEinsteinSolver, NonConvergence,  # noqa: E402
                     PositivityLoss, PotentialField, SolverError, SolverOptions,
                     continuation_solve, solve_ke)
from .oracle import HyperbolicAnnulusOracle, hyperbolic_annulus_oracle  # noqa: E402
from .decay import DecayRegressor, fit_decay  # noqa: E402
from .wp import continuity_scan, wp_potential  # noqa: E402
from .config import ConfigError, ExperimentConfig, load_config  # noqa: E402

__all__ = [
    "__version__",
    "FamilyConfig", "FiberGrid", "HermitianForm", "PoleSpec", "VolumeDensity",
    "background_form", "build_annulus_fiber", "build_torus_fiber", "family",
    "integrate", "volume_density",
    "BoundaryDataMissing", "KahlerEinsteinSolver", "NonConvergence", "PositivityLoss",
    "PotentialField", "SolverError", "SolverOptions", "continuation_solve", "solve_ke",
    "HyperbolicAnnulusOracle", "hyperbolic_annulus_oracle",
    "DecayRegressor", "fit_decay", "continuity_scan", "wp_potential",
    "ConfigError", "ExperimentConfig", "load_config",
]

"""Fast-diffusion limits of reaction-diffusion SPDEs with boundary noise."""

__version__ = "0.1.0"

from .basis import Truncation, mean_of_product  # noqa: E402
from .limit import build_limit_system, c_ell, integrate_limit  # noqa: E402
from .noise import BoundaryNoiseSpec, EdgeNoise, Regime, assemble_covariance  # noqa: E402
from .polynomial import ReactionPolynomial  # noqa: E402
from .solver import SpectralSolver, SystemSpec  # noqa: E402

__all__ = [
    "BoundaryNoiseSpec", "EdgeNoise", "ReactionPolynomial", "Regime", "SpectralSolver",
    "SystemSpec", "Truncation", "assemble_covariance", "build_limit_system", "c_ell",
    "integrate_limit", "mean_of_product",
]

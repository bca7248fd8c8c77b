"""bou-lab: simulation and verification laboratory for branching OU particle systems."""

from .params import ModelParams, Regime
from .spectral import SpectralFunction

__version__ = "0.1.0"

__all__ = ["ModelParams", "Regime", "SpectralFunction", "__version__"]

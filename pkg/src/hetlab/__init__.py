"""Numerics for a Bykov heteroclinic network on the three-sphere.

Submodules
----------
model       the vector field family, equilibria and spectral constants
integrate   adaptive integration, Lyapunov exponents and section events
maps        normal-form return map and its singular limit
circlemap   the singular circle map and its parameter/interval analysis
switching   itinerary coding, switching census and annulus coverage
cli         the ``hetlab`` command-line tool
"""

from hetlab.model import ModelParams, SpectralData, derived_constants, spectral_from_model

__version__ = "0.1.0"

__all__ = ["ModelParams", "SpectralData", "derived_constants", "spectral_from_model", "__version__"]

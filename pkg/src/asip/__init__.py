"""Simulation toolkit for dissipative bosonic transport on a one-dimensional lattice."""

__version__ = "0.1.0"

from .model import (DensityProfile, DerivedRates, LatticeParams, Phase, Provenance, asymmetry_from_bath,
                    derive_rates)

__all__ = ["DensityProfile", "DerivedRates", "LatticeParams", "Phase", "Provenance",
           "asymmetry_from_bath", "derive_rates", "__version__"]

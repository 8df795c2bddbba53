"""Backward volume contraction on pre-orbits of non-uniformly expanding maps, checked numerically."""

__version__ = "0.1.0"

from .dynamics import Doubling, MapSystem, Quadratic, Viana, make_system  # noqa: E402
from .rates import RateSequence, make_rate  # noqa: E402

__all__ = ["Doubling", "MapSystem", "Quadratic", "RateSequence", "Viana", "make_rate", "make_system"]

"""Kriging-assisted reliability-based design optimization.

Subpackages are imported lazily by the user; the top level only exposes the
version and the most common entry points.
"""
__version__ = "0.1.0"

from .probability import DesignVector, Family, MarginalSpec, RandomVectorSpec  # noqa: E402
from .reliability import SubsetConfig, subset_simulate  # noqa: E402

"""Generalized solid-on-solid model: exact partition functions, contours,
cluster expansion, heat-bath sampling and entropic-repulsion analysis."""

__version__ = "0.1.0"

from .exact import ConstraintSet, TruncationWindow, enumerate_partition, exact_probability, transfer_matrix
from .lattice import DualBond, Region, rectangle, square
from .model import STANDARD, ZERO_BC, BondWeightRule, HeightField, ModelParams, energy, staircase_bc

"""Numerical laboratory for super-Brownian exit measures.

Subpackages cover domain kernels, the nonlinear log-Laplace equation,
set-partition moment recursions, branching-particle simulation of exit
measures, h-transform conditioning tables, and the fragmentation-backbone
construction of the conditioned process.
"""

from sbmlab.domains import Interval, Disk, ScalarField, BoundaryFunction

__all__ = ["Interval", "Disk", "ScalarField", "BoundaryFunction"]

__version__ = "0.1.0"

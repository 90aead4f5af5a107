"""Desk-scale computations for bounded-height points on bidegree hypersurfaces of toric torsors."""

__version__ = "0.1.0"

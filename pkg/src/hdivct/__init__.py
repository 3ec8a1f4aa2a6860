"""Divergence-controlled magnetic transport on periodic tetrahedral meshes.

Hierarchical H(div)-conforming vector elements of arbitrary degree, a
semi-Lagrangian advection solver on the periodic unit cube, and local,
two-step, and full-basis divergence corrections.
"""

__version__ = "0.1.0"

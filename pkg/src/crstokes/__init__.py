"""Crouzeix-Raviart Stokes solver with divergence-preserving reconstructions on graded tetrahedral meshes."""

__version__ = "0.1.0"

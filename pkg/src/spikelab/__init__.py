"""Numerical laboratory for boundary spikes in mixed Dirichlet-Neumann problems."""

__version__ = "0.1.0"

"""Topology of excursion and level sets of planar Gaussian random fields:
closed-form critical point densities, exact conditional (Palm) sampling at
saddles, component counting, and Monte Carlo verification pipelines."""

__version__ = "1.0.0"

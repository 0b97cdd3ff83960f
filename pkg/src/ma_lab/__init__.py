"""Numerical laboratory for the Monge-Ampere equation det D^2u = 1 on boxes."""

__version__ = "0.1.0"

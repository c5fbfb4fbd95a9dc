"""Susceptibility functions of piecewise expanding unimodal maps: acim, series, limits and response."""

__version__ = "0.1.0"

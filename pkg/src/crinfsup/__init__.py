"""Crouzeix-Raviart Stokes discretizations of arbitrary order: bases,
assembly, discrete inf-sup constants, mesh criticality and constructive
divergence right inverses."""

__version__ = "0.1.0"

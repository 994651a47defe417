"""Quasilinear analysis of control loops with a bivariate saturating actuator."""

__version__ = '0.1.0'

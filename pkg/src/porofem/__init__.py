"""Multiphysics finite elements for nonlinear quasi-static poroelasticity."""

__version__ = "0.1.0"

# ThermoCH - Non-isothermal Cahn-Hilliard toolkit
"""
ThermoCH - A finite-volume simulator for the non-isothermal Cahn-Hilliard
system with a diagnostics engine for its balance laws, entropy inequality
and a-priori norm bounds.

Run single simulations, epsilon-continuation studies and manufactured-solution
convergence studies from a flat `section.key = value` config file.
"""

__version__ = "1.0.0"
__author__ = "ThermoCH"

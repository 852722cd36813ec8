"""Certified lower bounds for polynomial minimization via perturbed SOS relaxations."""

__version__ = "0.1.0"

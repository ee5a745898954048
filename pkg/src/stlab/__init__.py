"""Simulation and verification laboratory for stable Levy trees."""
__version__ = "0.1.0"

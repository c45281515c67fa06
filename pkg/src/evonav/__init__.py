"""Evolving curricula for crowd navigation: maps, pedestrians, simulation, scoring and training."""

__version__ = "0.1.0"

"""Discrete p-energies, conductance scaling and cutoff constructions on self-similar partitions."""

__version__ = "0.1.0"

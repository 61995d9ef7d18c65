"""Nested open-quantum-system model of a photon condensate in a dye-filled microcavity."""

__version__ = "0.1.0"

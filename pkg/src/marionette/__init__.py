"""Compiler and cycle-level simulator for a spatial PE array with a
decoupled control flow plane."""

__version__ = "0.1.0"

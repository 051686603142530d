"""Simulation and readout toolkit for a cavity-optomechanical accelerometer."""

__version__ = "0.1.0"

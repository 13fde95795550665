"""
fluortraj: simulation and analysis of heterodyne-monitored qubit fluorescence trajectories.
"""

__version__ = "0.1.0"

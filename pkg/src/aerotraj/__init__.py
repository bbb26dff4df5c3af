"""Toolkit for extracting geo-referenced 3D traffic trajectories from
quasi-stationary aerial cameras and mining statistics and safety-critical
scenarios from them."""

__version__ = "0.1.0"

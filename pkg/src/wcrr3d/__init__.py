"""Weakly convex ridge regularization for 3D non-Cartesian multi-coil reconstruction."""
__version__ = "0.1.0"

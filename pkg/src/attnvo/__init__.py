"""Attention-based monocular visual odometry at desk scale."""

__version__ = "0.1.0"

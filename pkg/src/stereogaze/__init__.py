"""Regression-based 3D point-of-gaze estimation with a synthetic binocular simulator."""

__version__ = "0.1.0"

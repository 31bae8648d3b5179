"""Cobb-angle estimation toolkit: spine geometry, preprocessing, metrics and
small from-scratch convolutional regressors."""

__version__ = "0.1.0"

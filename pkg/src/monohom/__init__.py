"""Numerical homogenization of quasi-linear monotone elliptic problems."""

__version__ = "0.1.0"

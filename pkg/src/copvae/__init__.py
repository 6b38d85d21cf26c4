"""Copula and Gaussian-mixture variational autoencoders for bounded inverse problems."""

__version__ = "0.1.0"

"""Infer player behaviour tendencies from move decisions by simulation and MCMC."""

__version__ = "0.1.0"

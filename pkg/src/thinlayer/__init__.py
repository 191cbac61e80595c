"""Reaction-diffusion through a thin heterogeneous layer: micro problem,
homogenized limit, correctors and convergence studies."""

__version__ = "0.1.0"

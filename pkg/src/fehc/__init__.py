"""Guaranteed local and global energy-error bounds for P1 finite elements.

The package builds triangulations, solves conforming and Raviart-Thomas mixed
Poisson problems and combines them into computable error bounds on a
rectangular subdomain using a piecewise-linear cutoff weight.
"""

__version__ = "0.1.0"

"""Numerical periodic homogenization toolkit.

Cell-problem correctors, effective coefficients, flux and Dirichlet
correctors, mollified Green's-matrix approximations, and epsilon-sweep rate
studies for divergence-form elliptic systems with lower-order terms.
"""

__version__ = "0.1.0"

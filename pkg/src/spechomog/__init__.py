"""Spectral toolkit for nonlocal convolution-type operators.

Computes, at desk scale: principal eigenvalues of periodic cell problems on
the torus, effective diffusion matrices and correctors, the bottom of the
spectrum of the epsilon-scale nonlocal operator on a box with its two-term
asymptotics, and the additive eigenvalue of the effective Hamilton-Jacobi
problem for locally periodic media.
"""

__version__ = "0.1.0"

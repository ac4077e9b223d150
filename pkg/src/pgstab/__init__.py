"""Stabilized Petrov-Galerkin solvers for parametric PDEs.

Assembles Petrov-Galerkin systems with optimal test functions, compresses
the optimal-test coefficient matrix into a hierarchical low-rank format
(optionally guided by a trained neural surrogate for block singular
values), and solves the reduced system with GMRES using fast hierarchical
matrix-vector products.
"""

__version__ = "0.1.0"

"""Numerical laboratory for H-bubbles and the H-system heat flow.

Subpackages cover the degree-m bubble profiles and their Frenet frames,
the linearized operator with its full bounded-kernel catalog, the
corotational 1D flow, per-mode inner parabolic solvers, the nonlocal
modulation dynamics (scale/rotation/translation and the mode +-1
coefficients), the mode-0 distorted-Fourier spectral theory, and the
gluing-constant feasibility checker.
"""

__version__ = "0.1.0"

from . import (bubble, constraints, flow1d, grids, linearized, modulation,
               parabolic, spectral)

__all__ = [
    "bubble",
    "constraints",
    "flow1d",
    "grids",
    "linearized",
    "modulation",
    "parabolic",
    "spectral",
    "__version__",
]

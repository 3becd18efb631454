"""
Quadrature rules on the reference simplices.

Conical-product (collapsed Gauss-Jacobi) rules: the reference simplex is the
image of a cube under the Duffy map, the Jacobian factors are absorbed in the
Jacobi weights, and an n-point rule per direction integrates every polynomial
of total degree 2n − 1 exactly. Points are returned in barycentric
coordinates, weights sum to the reference volume (1/6 or 1/2).
"""

from dataclasses import dataclass
from functools import lru_cache
from typing import Tuple

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

from .utils import validate_count

# n = 3 points per direction: exact up to degree 5, enough for P2 x P2 mass,
# stiffness and the P2 convection integrand on affine elements.
DEFAULT_POINTS = 3

# The quartic bubble needs degree 8 for its mass and 11 for convection.
BUBBLE_POINTS = 6


@dataclass(frozen=True)
class QuadratureRule:
    """Barycentric points ``(nq, dim + 1)`` and weights ``(nq,)``."""

    points: np.ndarray
    weights: np.ndarray

    @property
    def degree(self) -> int:
        """Total polynomial degree integrated exactly."""
        n = round(len(self.weights) ** (1.0 / (self.points.shape[1] - 1)))
        return 2 * n - 1

    def __len__(self) -> int:
        return len(self.weights)


def _jacobi_01(n: int, alpha: int) -> Tuple[np.ndarray, np.ndarray]:
    """Gauss-Jacobi rule for weight (1 − s)^alpha on [0, 1]."""
    t, w = roots_jacobi(n, alpha, 0)
    return (1.0 + t) / 2.0, w / 2.0 ** (alpha + 1)


@lru_cache(maxsize=None)
def tet_rule(n: int = DEFAULT_POINTS) -> QuadratureRule:
    """Collapsed Gauss rule on the reference tetrahedron (n³ points)."""
    validate_count(n, "n", 1)
    a, wa = _jacobi_01(n, 2)
    b, wb = _jacobi_01(n, 1)
    c, wc = _jacobi_01(n, 0)
    A, B, C = np.meshgrid(a, b, c, indexing="ij")
    W = wa[:, None, None] * wb[None, :, None] * wc[None, None, :]
    x = A
    y = B * (1.0 - A)
    z = C * (1.0 - A) * (1.0 - B)
    lam = np.stack([1.0 - x - y - z, x, y, z], axis=-1).reshape(-1, 4)
    return QuadratureRule(points=lam, weights=W.reshape(-1))


@lru_cache(maxsize=None)
def triangle_rule(n: int = DEFAULT_POINTS) -> QuadratureRule:
    """Collapsed Gauss rule on the reference triangle (n² points)."""
    validate_count(n, "n", 1)
    a, wa = _jacobi_01(n, 1)
    b, wb = _jacobi_01(n, 0)
    A, B = np.meshgrid(a, b, indexing="ij")
    W = wa[:, None] * wb[None, :]
    x = A
    y = B * (1.0 - A)
    lam = np.stack([1.0 - x - y, x, y], axis=-1).reshape(-1, 3)
    return QuadratureRule(points=lam, weights=W.reshape(-1))


def gauss_legendre(n: int, a: float = 0.0, b: float = 1.0) -> Tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre points and weights on ``[a, b]``."""
    validate_count(n, "n", 1)
    t, w = roots_legendre(n)
    half = 0.5 * (b - a)
    return a + half * (t + 1.0), half * w

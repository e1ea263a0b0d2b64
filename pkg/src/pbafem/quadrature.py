"""Quadrature on reference simplices.

Rules are built as collapsed (Stroud conical product) Gauss-Jacobi rules, so
any dimension and degree is available.  Points are returned in barycentric
coordinates and the weights sum to the reference volume ``1/d!``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi


@dataclass(frozen=True)
class QuadratureRule:
    bary: np.ndarray  # (nq, d+1)
    weights: np.ndarray  # (nq,)
    degree: int

    @property
    def dim(self):
        return self.bary.shape[1] - 1

    def __len__(self):
        return len(self.weights)

    def points(self, vertices):
        """Physical points for element vertex arrays ``(m, d+1, D)`` -> ``(m, nq, D)``."""
        return np.einsum("qi,mik->mqk", self.bary, vertices)


@lru_cache(maxsize=None)
def _rule(dim, degree):
    if dim == 0:
        return np.ones((1, 1)), np.ones(1)
    n = max(1, math.ceil((degree + 1) / 2))
    nodes, weights = [], []
    for k in range(dim):
        a = dim - 1 - k
        t, w = roots_jacobi(n, a, 0)
        nodes.append((t + 1) / 2)
        weights.append(w / 2 ** (a + 1))
    grids = np.meshgrid(*nodes, indexing="ij")
    wgrid = np.meshgrid(*weights, indexing="ij")
    u = np.stack([g.ravel() for g in grids], axis=1)
    w = np.prod(np.stack([g.ravel() for g in wgrid], axis=1), axis=1)
    x = np.empty_like(u)
    scale = np.ones(len(u))
    for k in range(dim):
        x[:, k] = u[:, k] * scale
        scale = scale * (1 - u[:, k])
    bary = np.column_stack([1 - x.sum(axis=1), x])
    return bary, w


def simplex_rule(dim: int, degree: int) -> QuadratureRule:
    """Rule on the reference ``dim``-simplex exact for polynomials of total ``degree``."""
    if dim < 0 or degree < 0:
        raise ValueError("dim and degree must be nonnegative")
    bary, w = _rule(dim, degree)
    bary = bary.copy()
    w = w.copy()
    bary.setflags(write=False)
    w.setflags(write=False)
    return QuadratureRule(bary, w, degree)


def vertex_rule(dim: int) -> QuadratureRule:
    """Trapezoidal (mass lumping) rule at the vertices, exact for degree 1."""
    bary = np.eye(dim + 1)
    w = np.full(dim + 1, 1.0 / math.factorial(dim) / (dim + 1))
    return QuadratureRule(bary, w, 1)

"""Quadrature rules on reference simplices of dimension 1, 2 and 3.

Rules are conical (collapsed) products of Gauss-Jacobi rules, so one code
path covers edges, triangles and tetrahedra at any requested order.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi


@lru_cache(maxsize=None)
def simplex_rule(dim: int, n: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(points, weights)`` on the unit reference simplex.

    ``points`` has shape ``(q, dim)`` in reference coordinates and the
    weights sum to ``1/dim!``, the reference volume. With ``n`` points per
    collapsed direction the rule integrates polynomials of degree ``2n-1``
    exactly.
    """
    if dim < 1:
        raise ValueError("simplex dimension must be at least 1")
    axes = []
    for k in range(dim):
        alpha = dim - 1 - k
        t, w = roots_jacobi(n, alpha, 0.0)
        axes.append(((1.0 + t) / 2.0, w / 2.0 ** (alpha + 1)))
    grids = np.meshgrid(*[a[0] for a in axes], indexing="ij")
    wgrid = np.meshgrid(*[a[1] for a in axes], indexing="ij")
    xi = np.stack([g.ravel() for g in grids], axis=1)
    weights = np.prod(np.stack([g.ravel() for g in wgrid], axis=1), axis=1)
    points = np.empty_like(xi)
    scale = np.ones(xi.shape[0])
    for k in range(dim):
        points[:, k] = xi[:, k] * scale
        scale = scale * (1.0 - xi[:, k])
    return points, weights


def barycentric(points: np.ndarray) -> np.ndarray:
    """P1 shape-function values at reference points, shape ``(q, dim+1)``."""
    return np.column_stack([1.0 - points.sum(axis=1), points])


def map_points(simplices: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Map reference points into each simplex.

    ``simplices`` has shape ``(m, dim+1, d)`` (vertex coordinates); the result
    has shape ``(m, q, d)``.
    """
    lam = barycentric(points)
    return np.einsum("qa,mad->mqd", lam, simplices)

"""Quadrature on the reference triangle and on edges.

Triangle rules are conical products of Gauss-Legendre and Gauss-Jacobi
rules: all weights positive, exact for polynomials up to the requested
total degree.  Weights are normalized to sum to one, so an element
integral is |T| * sum(w * f).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import roots_jacobi


@dataclass(frozen=True)
class QuadratureRule:
    """Barycentric points and weights (summing to 1) on the reference triangle."""

    points: np.ndarray            # (nq, 3) barycentric coordinates
    weights: np.ndarray           # (nq,)
    exactness_degree: int

    def __post_init__(self):
        self.points.setflags(write=False)
        self.weights.setflags(write=False)

    @property
    def n_points(self) -> int:
        return len(self.weights)


@lru_cache(maxsize=None)
def triangle_rule(exactness: int) -> QuadratureRule:
    """Positive-weight rule exact for total degree ``exactness`` polynomials."""
    if exactness < 0:
        raise ValueError("exactness must be nonnegative")
    m = max(1, (exactness + 2) // 2)
    # Direction with weight (1 - x) on [0, 1]: Gauss-Jacobi(1, 0) mapped from [-1, 1].
    uj, wj = roots_jacobi(m, 1.0, 0.0)
    xj = (1.0 + uj) / 2.0
    wxj = wj / 4.0
    # Plain Gauss-Legendre on [0, 1].
    ul, wl = leggauss(m)
    tl = (1.0 + ul) / 2.0
    wtl = wl / 2.0

    x = np.repeat(xj, m)
    t = np.tile(tl, m)
    y = (1.0 - x) * t
    w = np.repeat(wxj, m) * np.tile(wtl, m)
    w = w / w.sum()
    lam = np.column_stack([1.0 - x - y, x, y])
    return QuadratureRule(points=lam, weights=w, exactness_degree=exactness)


@lru_cache(maxsize=None)
def edge_rule(exactness: int):
    """Gauss-Legendre points/weights on [0, 1]; weights sum to 1."""
    m = max(1, (exactness + 2) // 2)
    u, w = leggauss(m)
    return (1.0 + u) / 2.0, w / 2.0

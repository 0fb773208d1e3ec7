"""Polynomial bases and quadrature on the reference triangle and edge.

The reference triangle has vertices (0,0), (1,0), (0,1) (area 1/2); the
reference edge is [0,1].  Element-interior fields use a modal basis that is
orthonormal in L2 on the reference triangle; skeleton fields use nodal
Lagrange bases at Gauss-Lobatto points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

MAX_QUAD_DEGREE = 30
MAX_BASIS_ORDER = 12


@dataclass(frozen=True)
class QuadratureRule:
    """Points (n, dim) and positive weights summing to the reference measure."""

    points: np.ndarray
    weights: np.ndarray
    degree: int


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> QuadratureRule:
    """Collapsed-tensor Gauss rule on the reference triangle.

    Exact for all polynomials of total degree <= ``degree``; weights are
    positive and sum to 1/2.  Built from Gauss-Legendre in the collapsed
    direction and Gauss-Jacobi (weight 1-v) in the other, so the Duffy
    Jacobian is absorbed into the weights.
    """
    if not 0 <= degree <= MAX_QUAD_DEGREE:
        raise ValueError(f"triangle quadrature degree {degree} outside [0, {MAX_QUAD_DEGREE}]")
    n = degree // 2 + 1
    xu, wu = roots_legendre(n)
    u = 0.5 * (xu + 1.0)
    wu = 0.5 * wu
    xv, wv = roots_jacobi(n, 1.0, 0.0)
    v = 0.5 * (xv + 1.0)
    wv = 0.25 * wv  # includes the (1-v) factor of the Duffy map
    uu, vv = np.meshgrid(u, v, indexing="ij")
    pts = np.column_stack([(uu * (1.0 - vv)).ravel(), vv.ravel()])
    w = np.outer(wu, wv).ravel()
    return QuadratureRule(pts, w, degree)


@lru_cache(maxsize=None)
def edge_rule(degree: int) -> QuadratureRule:
    """Gauss-Legendre rule on [0,1], exact to ``degree``; weights sum to 1."""
    if not 0 <= degree <= MAX_QUAD_DEGREE:
        raise ValueError(f"edge quadrature degree {degree} outside [0, {MAX_QUAD_DEGREE}]")
    n = degree // 2 + 1
    x, w = roots_legendre(n)
    return QuadratureRule(0.5 * (x[:, None] + 1.0), 0.5 * w, degree)


def default_volume_degree(k: int, s: int) -> int:
    # covers every bilinear term including the degree-1 factor r
    return min(2 * (k + s) + 3, MAX_QUAD_DEGREE)


def default_edge_degree(k: int, s: int) -> int:
    return min(2 * (k + s) + 2, MAX_QUAD_DEGREE)


def triangle_dim(order: int) -> int:
    return (order + 1) * (order + 2) // 2


def _monomial_exponents(order: int) -> list[tuple[int, int]]:
    return [(d - b, b) for d in range(order + 1) for b in range(d + 1)]


@lru_cache(maxsize=None)
def _orthonormal_coeffs(order: int) -> np.ndarray:
    """Coefficient matrix C with phi_i = sum_j C[j, i] * x^a_j y^b_j.

    Built from an exact rational LDL^T factorization of the monomial mass
    matrix on the reference triangle (int x^a y^b = a! b! / (a+b+2)!), so the
    resulting set is orthonormal to machine precision.
    """
    exps = _monomial_exponents(order)
    n = len(exps)
    M = [[Fraction(0)] * n for _ in range(n)]
    for i, (ai, bi) in enumerate(exps):
        for j, (aj, bj) in enumerate(exps):
            a, b = ai + aj, bi + bj
            M[i][j] = Fraction(math.factorial(a) * math.factorial(b), math.factorial(a + b + 2))
    # exact LDL^T
    L = [[Fraction(0)] * n for _ in range(n)]
    D = [Fraction(0)] * n
    for i in range(n):
        for j in range(i):
            s = M[i][j] - sum(L[i][k] * L[j][k] * D[k] for k in range(j))
            L[i][j] = s / D[j]
        L[i][i] = Fraction(1)
        D[i] = M[i][i] - sum(L[i][k] * L[i][k] * D[k] for k in range(i))
    # exact inverse of the unit lower-triangular factor
    W = [[Fraction(0)] * n for _ in range(n)]
    for i in range(n):
        W[i][i] = Fraction(1)
        for j in range(i - 1, -1, -1):
            W[i][j] = -sum(L[i][k] * W[k][j] for k in range(j, i))
    C = np.empty((n, n))
    for i in range(n):
        di = 1.0 / math.sqrt(float(D[i]))
        for j in range(n):
            C[j, i] = float(W[i][j]) * di
    return C


class TriangleModalBasis:
    """L2-orthonormal modal basis of P^order on the reference triangle."""

    kind = "modal-triangle"

    def __init__(self, order: int):
        if not 0 <= order <= MAX_BASIS_ORDER:
            raise ValueError(f"modal basis order {order} outside [0, {MAX_BASIS_ORDER}]")
        self.order = order
        self.dim = triangle_dim(order)
        self._exps = np.array(_monomial_exponents(order), dtype=int)
        self._coeffs = _orthonormal_coeffs(order)

    def eval(self, points: np.ndarray):
        """Values (n, dim) and reference gradients (n, dim, 2) at ``points``."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        a = self._exps[:, 0]
        b = self._exps[:, 1]
        x = pts[:, 0][:, None]
        y = pts[:, 1][:, None]
        V = x**a * y**b
        Vx = np.where(a > 0, a * x ** np.maximum(a - 1, 0) * y**b, 0.0)
        Vy = np.where(b > 0, b * x**a * y ** np.maximum(b - 1, 0), 0.0)
        vals = V @ self._coeffs
        grads = np.stack([Vx @ self._coeffs, Vy @ self._coeffs], axis=-1)
        return vals, grads


def lobatto_nodes(order: int) -> np.ndarray:
    """order+1 Gauss-Lobatto nodes on [0,1], endpoints included."""
    if order < 1:
        raise ValueError("nodal edge basis needs order >= 1")
    if order == 1:
        return np.array([0.0, 1.0])
    xi, _ = roots_jacobi(order - 1, 1.0, 1.0)
    return np.concatenate([[0.0], 0.5 * (xi + 1.0), [1.0]])


class EdgeNodalBasis:
    """Lagrange basis of P^order on [0,1] at Gauss-Lobatto nodes."""

    kind = "nodal-edge"

    def __init__(self, order: int):
        if not 1 <= order <= MAX_BASIS_ORDER:
            raise ValueError(f"nodal basis order {order} outside [1, {MAX_BASIS_ORDER}]")
        self.order = order
        self.dim = order + 1
        self.nodes = lobatto_nodes(order)
        V = np.vander(self.nodes, order + 1, increasing=True)
        self._coeffs = np.linalg.inv(V)  # column i: monomial coeffs of shape i

    def eval(self, points: np.ndarray):
        """Values (n, dim) and derivatives (n, dim) at points in [0,1]."""
        t = np.asarray(points, dtype=float).reshape(-1)
        p = self.order
        V = np.vander(t, p + 1, increasing=True)
        e = np.arange(p + 1)
        Vd = np.where(e > 0, e * t[:, None] ** np.maximum(e - 1, 0), 0.0)
        return V @ self._coeffs, Vd @ self._coeffs


def eval_shapes(shape_set, points):
    """Dense value/derivative tables of a shape set at reference points."""
    return shape_set.eval(points)
